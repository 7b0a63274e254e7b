#include "fbb/linear_op.hpp"

#include <cmath>

namespace fbb {

LinearOp LinearOp::zero(Index rows, Index cols) {
  LinearOp op;
  op.kind_ = Kind::Zero;
  op.rows_ = rows;
  op.cols_ = cols;
  return op;
}

LinearOp LinearOp::scaled(Index dim, double alpha) {
  LinearOp op;
  op.kind_ = Kind::Scaled;
  op.rows_ = op.cols_ = dim;
  op.alpha_ = alpha;
  return op;
}

LinearOp LinearOp::diagonal(Vec diag) {
  LinearOp op;
  op.kind_ = Kind::Diagonal;
  op.rows_ = op.cols_ = diag.size();
  op.diag_ = std::move(diag);
  return op;
}

LinearOp LinearOp::dense(Mat m) {
  LinearOp op;
  op.kind_ = Kind::Dense;
  op.rows_ = m.rows();
  op.cols_ = m.cols();
  op.dense_ = std::move(m);
  return op;
}

LinearOp LinearOp::from_dense(const Mat& m, double rel_tol) {
  const Index r = m.rows();
  const Index c = m.cols();
  if (r == 0 || c == 0) return zero(r, c);
  const double scale = m.cwiseAbs().maxCoeff();
  if (scale == 0.0) return zero(r, c);
  if (r != c) return dense(m);
  const double tol = rel_tol * scale;
  Mat off = m;
  off.diagonal().setZero();
  if (off.cwiseAbs().maxCoeff() > tol) return dense(m);
  const Vec d = m.diagonal();
  if ((d.array() - d(0)).abs().maxCoeff() <= tol) return scaled(r, d.mean());
  return diagonal(d);
}

Mat LinearOp::apply(const Mat& x) const {
  if (x.rows() != cols_) throw InvalidArgument("LinearOp::apply: dimension mismatch");
  switch (kind_) {
    case Kind::Zero:
      return Mat::Zero(rows_, x.cols());
    case Kind::Scaled:
      return alpha_ * x;
    case Kind::Diagonal:
      return diag_.asDiagonal() * x;
    case Kind::Dense:
      return dense_ * x;
  }
  return {};
}

void LinearOp::apply_add(const Mat& x, Mat& out) const {
  if (x.rows() != cols_ || out.rows() != rows_ || out.cols() != x.cols())
    throw InvalidArgument("LinearOp::apply_add: dimension mismatch");
  switch (kind_) {
    case Kind::Zero:
      return;
    case Kind::Scaled:
      out += alpha_ * x;
      return;
    case Kind::Diagonal:
      out += diag_.asDiagonal() * x;
      return;
    case Kind::Dense:
      out.noalias() += dense_ * x;
      return;
  }
}

Mat LinearOp::to_dense() const {
  switch (kind_) {
    case Kind::Zero:
      return Mat::Zero(rows_, cols_);
    case Kind::Scaled:
      return alpha_ * Mat::Identity(rows_, cols_);
    case Kind::Diagonal:
      return diag_.asDiagonal();
    case Kind::Dense:
      return dense_;
  }
  return {};
}

CovOp CovOp::scaled_identity(Index dim, double variance) {
  if (!(variance > 0.0) && dim > 0) throw InvalidArgument("CovOp: variance must be positive");
  CovOp op;
  op.kind_ = Kind::ScaledIdentity;
  op.dim_ = dim;
  op.var_ = variance;
  op.log_norm_ = dim == 0 ? 0.0 : -0.5 * static_cast<double>(dim) * (std::log(variance) + kLog2Pi);
  return op;
}

CovOp CovOp::diagonal(Vec variances) {
  if (variances.size() > 0 && !(variances.minCoeff() > 0.0))
    throw InvalidArgument("CovOp: variances must be positive");
  CovOp op;
  op.kind_ = Kind::Diagonal;
  op.dim_ = variances.size();
  op.log_norm_ = -0.5 * (variances.array().log().sum() + static_cast<double>(op.dim_) * kLog2Pi);
  op.vars_ = std::move(variances);
  return op;
}

CovOp CovOp::dense(const Mat& cov) {
  CovOp op;
  op.kind_ = Kind::Dense;
  op.dim_ = cov.rows();
  op.factor_ = CovFactor(cov);
  op.log_norm_ = -0.5 * (op.factor_.log_det() + static_cast<double>(op.dim_) * kLog2Pi);
  return op;
}

CovOp CovOp::from_dense(const Mat& cov, double rel_tol) {
  const Index d = cov.rows();
  if (cov.cols() != d) throw InvalidArgument("CovOp: covariance must be square");
  if (d == 0) return scaled_identity(0, 1.0);
  const double scale = cov.cwiseAbs().maxCoeff();
  const double tol = rel_tol * scale;
  Mat off = cov;
  off.diagonal().setZero();
  if (scale > 0.0 && off.cwiseAbs().maxCoeff() <= tol && cov.diagonal().minCoeff() > 0.0) {
    const Vec dg = cov.diagonal();
    if ((dg.array() - dg(0)).abs().maxCoeff() <= tol) return scaled_identity(d, dg.mean());
    return diagonal(dg);
  }
  return dense(cov);
}

Mat CovOp::transform_noise(const Mat& z) const {
  Mat out = Mat::Zero(dim_, z.cols());
  add_noise(z, out);
  return out;
}

void CovOp::add_noise(const Mat& z, Mat& out) const {
  if (z.rows() != dim_) throw InvalidArgument("CovOp: noise dimension mismatch");
  switch (kind_) {
    case Kind::ScaledIdentity:
      out += std::sqrt(var_) * z;
      return;
    case Kind::Diagonal:
      out += vars_.cwiseSqrt().asDiagonal() * z;
      return;
    case Kind::Dense:
      out.noalias() += factor_.factor() * z;
      return;
  }
}

Vec CovOp::log_density_cols(const Mat& resid) const {
  if (resid.rows() != dim_) throw InvalidArgument("CovOp: residual dimension mismatch");
  if (dim_ == 0) return Vec::Zero(resid.cols());
  Vec quad;
  switch (kind_) {
    case Kind::ScaledIdentity:
      quad = resid.colwise().squaredNorm().transpose() / var_;
      break;
    case Kind::Diagonal:
      quad = (vars_.cwiseInverse().asDiagonal() * resid.cwiseAbs2()).colwise().sum().transpose();
      break;
    case Kind::Dense:
      quad = (factor_.inverse_factor() * resid).colwise().squaredNorm().transpose();
      break;
  }
  return (log_norm_ - 0.5 * quad.array()).matrix();
}

double CovOp::log_density(const Vec& resid) const { return log_density_cols(resid)(0); }

Mat CovOp::to_dense() const {
  switch (kind_) {
    case Kind::ScaledIdentity:
      return var_ * Mat::Identity(dim_, dim_);
    case Kind::Diagonal:
      return vars_.asDiagonal();
    case Kind::Dense:
      return factor_.factor() * factor_.factor().transpose();
  }
  return {};
}

}  // namespace fbb
