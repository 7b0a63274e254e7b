#pragma once

#include <Eigen/Dense>
#include <vector>

#include "fbb/error.hpp"

namespace fbb {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr double kJitterScale = 1e-9;
inline constexpr double kLog2Pi = 1.8378770664093453;

// Strictly increasing time points 0 = t_0 < ... < t_K = T.
class TimeGrid {
public:
  TimeGrid() = default;
  explicit TimeGrid(std::vector<double> points);

  const std::vector<double>& points() const noexcept { return points_; }
  int steps() const noexcept { return static_cast<int>(points_.size()) - 1; }
  double horizon() const noexcept { return points_.back(); }
  double operator[](int k) const { return points_.at(static_cast<size_t>(k)); }
  // Delta_k = t_k - t_{k-1}, k >= 1.
  double delta(int k) const { return (*this)[k] - (*this)[k - 1]; }

private:
  std::vector<double> points_{0.0, 1.0};
};

TimeGrid make_uniform_grid(double T, int K);

struct Gaussian {
  Vec mean;
  Mat cov;

  Gaussian() = default;
  Gaussian(Vec m, Mat c);

  Index dim() const noexcept { return mean.size(); }
  // Throws InvalidArgument if the symmetry or PSD invariant is violated.
  void validate() const;
};

// Symmetric square-root factor S = F F^T with a cached inverse, used for
// sampling and density evaluation. Cholesky first, eigen fallback second.
class CovFactor {
public:
  CovFactor() = default;
  explicit CovFactor(const Mat& cov, bool add_jitter = true);

  const Mat& factor() const noexcept { return f_; }
  const Mat& inverse_factor() const noexcept { return finv_; }
  double log_det() const noexcept { return log_det_; }
  Index dim() const noexcept { return f_.rows(); }

  Vec whiten(const Vec& r) const { return finv_ * r; }
  Mat precision() const { return finv_.transpose() * finv_; }

private:
  Mat f_;
  Mat finv_;
  double log_det_ = 0.0;
};

Mat symmetrize(const Mat& m);
Mat add_jitter(const Mat& cov);
Mat sqrtm_psd(const Mat& m);
// Inverse of a symmetric positive definite matrix (with jitter on failure).
Mat spd_inverse(const Mat& m);

double log_density(const Gaussian& g, const Vec& x);
Vec sample(const Gaussian& g, const Vec& standard_normal);

Gaussian gaussian_condition(const Gaussian& joint, const std::vector<Index>& y_indices,
                            const Vec& y_value);
Gaussian marginal(const Gaussian& joint, const std::vector<Index>& indices);

double log_sum_exp(const Vec& v);

}  // namespace fbb
