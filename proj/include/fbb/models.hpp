#pragma once

#include <functional>
#include <vector>

#include "fbb/core.hpp"
#include "fbb/kernel.hpp"
#include "fbb/rng.hpp"

namespace fbb {

struct GpRegressionSpec {
  Vec test_points;
  double lengthscale = 1.0;
  double magnitude = 1.0;
  Vec obs_noise;  // diagonal of Xi

  static GpRegressionSpec uniform(Index n, double lo, double hi, double noise_var);
  void validate() const;
};

// Joint Gaussian over (x, y), x first.
struct JointGaussianTarget {
  Gaussian joint;
  Index x_dim = 0;
  Index y_dim = 0;

  Gaussian x_marginal() const;
  Gaussian y_marginal() const;
  // Same joint reordered as (y, x), the order used by the diffusion state.
  Gaussian yx_joint() const;
};

Mat exponential_kernel(const Vec& tau, double lengthscale, double magnitude);
JointGaussianTarget build_gp_joint(const GpRegressionSpec& spec);
Gaussian exact_posterior(const JointGaussianTarget& target, const Vec& y);

// Wishart(d, I) draw, or the rank-one outer product when rank_one is set.
Mat wishart_reference(Index d, const RngStreamKey& key, bool rank_one = false);

// Gaussian Markov process described by its mean and two-time covariance.
struct GaussianProcessMoments {
  std::function<Vec(double)> mean;
  std::function<Mat(double, double)> cov;  // Cov(X_s, X_t)
  Index dim = 0;
};

// Dense affine kernel x' ~ N(M x + c, S).
struct DenseKernel {
  Mat M;
  Vec c;
  Mat S;
};

// Kernels X_{t_{k+1}} | X_{t_k} of a Gaussian Markov process.
std::vector<DenseKernel> forward_kernels(const GaussianProcessMoments& p, const std::vector<double>& times);
// Kernels X_{t_k} | X_{t_{k+1}}, listed from the end of the grid backwards.
std::vector<DenseKernel> backward_kernels(const GaussianProcessMoments& p, const std::vector<double>& times);

struct GaussianSbSpec {
  Gaussian start;
  Gaussian reference_end;
  double ref_dispersion = 1.0;
  double horizon = 1.0;

  void validate() const;
};

// Closed-form entropic bridge with Brownian reference sigma dW.
class GaussianSb {
public:
  explicit GaussianSb(GaussianSbSpec spec);

  const GaussianSbSpec& spec() const noexcept { return spec_; }
  // Cross-covariance Cov(X_0, X_T) of the optimal static coupling.
  const Mat& coupling() const noexcept { return coupling_; }
  Vec mean(double t) const;
  Mat cov(double s, double t) const;
  GaussianProcessMoments moments() const;
  // Law of X_T given X_0 = x0 under the static coupling.
  Gaussian terminal_given_initial(const Vec& x0) const;

private:
  GaussianSbSpec spec_;
  Mat coupling_;
};

struct SbKernels {
  std::vector<DenseKernel> forward;   // k: t_k -> t_{k+1}
  std::vector<DenseKernel> backward;  // j: t_{K-j} -> t_{K-j-1}
};

SbKernels gaussian_sb(const GaussianSbSpec& spec, const std::vector<double>& times);

// x_{k+1} = A_k x_k + b_k + N(0, Q_k), y_k = H_k x_k + d_k + N(0, R_k),
// states x_0..x_K, observations y_0..y_{K-1}.
struct LinearSsm {
  Gaussian init;
  std::vector<Mat> A;
  std::vector<Vec> b;
  std::vector<Mat> Q;
  std::vector<Mat> H;
  std::vector<Vec> d;
  std::vector<Mat> R;

  int steps() const noexcept { return static_cast<int>(A.size()); }
  Index state_dim() const noexcept { return init.dim(); }
  Index obs_dim() const { return H.empty() ? 0 : H.front().rows(); }
  void validate() const;

  static LinearSsm time_invariant(const Gaussian& init, const Mat& A, const Mat& Q, const Mat& H,
                                  const Mat& R, int K);
};

struct KalmanResult {
  double log_evidence = 0.0;
  std::vector<Gaussian> filtered;  // x_k | y_{0:k}, k < K
  std::vector<Gaussian> smoothed;  // x_k | y_{0:K-1}, k = 0..K
};

KalmanResult kalman_evidence_and_smoother(const LinearSsm& ssm, const std::vector<Vec>& obs);
// Forward-filter backward-sample draw of x_{0:K}; returns (K+1) x d.
Mat ffbs_sample(const LinearSsm& ssm, const std::vector<Vec>& obs, const KalmanResult& kr, Rng& rng);
// Simulates (x_{0:K}, y_{0:K-1}).
std::pair<Mat, std::vector<Vec>> simulate_ssm(const LinearSsm& ssm, Rng& rng);
// Dense joint of (y_0, ..., y_{K-1}); used as an oracle.
Gaussian ssm_observation_joint(const LinearSsm& ssm);

}  // namespace fbb
