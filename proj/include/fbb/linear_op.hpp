#pragma once

#include "fbb/core.hpp"

namespace fbb {

// Linear map with structure detection, so isotropic and diagonal models run in
// O(d) per particle instead of O(d^2).
class LinearOp {
public:
  enum class Kind { Zero, Scaled, Diagonal, Dense };

  LinearOp() = default;
  static LinearOp zero(Index rows, Index cols);
  static LinearOp scaled(Index dim, double alpha);
  static LinearOp diagonal(Vec diag);
  static LinearOp dense(Mat m);
  // Picks the cheapest exact-enough representation; entries below
  // rel_tol * max|m| off the diagonal are treated as zero.
  static LinearOp from_dense(const Mat& m, double rel_tol = 1e-10);

  Kind kind() const noexcept { return kind_; }
  Index rows() const noexcept { return rows_; }
  Index cols() const noexcept { return cols_; }

  Mat apply(const Mat& x) const;
  // out += op * x
  void apply_add(const Mat& x, Mat& out) const;
  Mat to_dense() const;

private:
  Kind kind_ = Kind::Zero;
  Index rows_ = 0;
  Index cols_ = 0;
  double alpha_ = 0.0;
  Vec diag_;
  Mat dense_;
};

// Covariance with the same structure classes; owns its square-root factor.
class CovOp {
public:
  enum class Kind { ScaledIdentity, Diagonal, Dense };

  CovOp() = default;
  static CovOp scaled_identity(Index dim, double variance);
  static CovOp diagonal(Vec variances);
  static CovOp dense(const Mat& cov);
  static CovOp from_dense(const Mat& cov, double rel_tol = 1e-10);

  Kind kind() const noexcept { return kind_; }
  Index dim() const noexcept { return dim_; }

  // F * z for a standard-normal matrix z (one column per draw).
  Mat transform_noise(const Mat& z) const;
  // out += F * z
  void add_noise(const Mat& z, Mat& out) const;
  // Log N(r; 0, S) for every column r of `resid`.
  Vec log_density_cols(const Mat& resid) const;
  double log_density(const Vec& resid) const;
  Mat to_dense() const;

private:
  Kind kind_ = Kind::ScaledIdentity;
  Index dim_ = 0;
  double var_ = 0.0;
  Vec vars_;
  CovFactor factor_;
  double log_norm_ = 0.0;  // -0.5 (log det + d log 2pi)
};

}  // namespace fbb
