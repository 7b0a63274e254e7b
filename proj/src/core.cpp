#include "fbb/core.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace fbb {

TimeGrid::TimeGrid(std::vector<double> points) : points_(std::move(points)) {
  if (points_.size() < 2) throw InvalidArgument("time grid needs at least two points");
  if (points_.front() != 0.0) throw InvalidArgument("time grid must start at 0");
  for (size_t k = 1; k < points_.size(); ++k) {
    if (!(points_[k] > points_[k - 1])) {
      std::ostringstream os;
      os << "time grid not strictly increasing at index " << k;
      throw InvalidArgument(os.str());
    }
  }
}

TimeGrid make_uniform_grid(double T, int K) {
  if (!(T > 0.0) || !std::isfinite(T)) throw InvalidArgument("horizon T must be positive");
  if (K < 1) throw InvalidArgument("step count K must be at least 1");
  std::vector<double> pts(static_cast<size_t>(K) + 1);
  for (int k = 0; k <= K; ++k) pts[static_cast<size_t>(k)] = T * k / K;
  pts.back() = T;
  return TimeGrid(std::move(pts));
}

Gaussian::Gaussian(Vec m, Mat c) : mean(std::move(m)), cov(std::move(c)) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size())
    throw InvalidArgument("Gaussian mean and covariance dimensions disagree");
}

void Gaussian::validate() const {
  const Index d = dim();
  if (d == 0) return;
  const double scale = cov.cwiseAbs().maxCoeff();
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(scale, 1e-300))
    throw InvalidArgument("covariance not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(cov), Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-8 * cov.trace() / static_cast<double>(d))
    throw InvalidArgument("covariance not positive semidefinite");
}

Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

Mat add_jitter(const Mat& cov) {
  Mat out = symmetrize(cov);
  const Index d = out.rows();
  if (d == 0) return out;
  const double tr = out.trace();
  const double eps = kJitterScale * std::max(tr / static_cast<double>(d), 1e-300);
  out.diagonal().array() += eps;
  return out;
}

Mat sqrtm_psd(const Mat& m) {
  if (m.rows() == 0) return m;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  if (es.info() != Eigen::Success) throw NumericalFailure("eigendecomposition failed");
  const Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

CovFactor::CovFactor(const Mat& cov, bool jitter) {
  const Index d = cov.rows();
  if (cov.cols() != d) throw InvalidArgument("covariance must be square");
  if (d == 0) return;
  const Mat c = jitter ? add_jitter(cov) : symmetrize(cov);
  Eigen::LLT<Mat> llt(c);
  if (llt.info() == Eigen::Success) {
    f_ = llt.matrixL();
    finv_ = f_.triangularView<Eigen::Lower>().solve(Mat::Identity(d, d));
    log_det_ = 2.0 * f_.diagonal().array().log().sum();
    return;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(c);
  if (es.info() != Eigen::Success) throw NumericalFailure("covariance factorization failed");
  const double floor = kJitterScale * std::max(c.trace() / static_cast<double>(d), 1e-300);
  const Vec ev = es.eigenvalues().cwiseMax(floor);
  const Mat& v = es.eigenvectors();
  f_ = v * ev.cwiseSqrt().asDiagonal() * v.transpose();
  finv_ = v * ev.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
  log_det_ = ev.array().log().sum();
}

Mat spd_inverse(const Mat& m) {
  const Index d = m.rows();
  if (d == 0) return m;
  Eigen::LLT<Mat> llt(symmetrize(m));
  if (llt.info() == Eigen::Success) return symmetrize(llt.solve(Mat::Identity(d, d)));
  const CovFactor f(m);
  return symmetrize(f.precision());
}

double log_density(const Gaussian& g, const Vec& x) {
  const Index d = g.dim();
  if (x.size() != d) throw InvalidArgument("log_density: dimension mismatch");
  if (d == 0) return 0.0;
  const CovFactor f(g.cov);
  const Vec z = f.whiten(x - g.mean);
  return -0.5 * (z.squaredNorm() + f.log_det() + static_cast<double>(d) * kLog2Pi);
}

Vec sample(const Gaussian& g, const Vec& standard_normal) {
  if (standard_normal.size() != g.dim()) throw InvalidArgument("sample: dimension mismatch");
  if (g.dim() == 0) return g.mean;
  const CovFactor f(g.cov);
  return g.mean + f.factor() * standard_normal;
}

namespace {

std::vector<Index> complement(Index d, const std::vector<Index>& idx) {
  std::vector<char> used(static_cast<size_t>(d), 0);
  for (Index i : idx) {
    if (i < 0 || i >= d) throw InvalidArgument("index out of range");
    if (used[static_cast<size_t>(i)]) throw InvalidArgument("duplicate index");
    used[static_cast<size_t>(i)] = 1;
  }
  std::vector<Index> out;
  for (Index i = 0; i < d; ++i)
    if (!used[static_cast<size_t>(i)]) out.push_back(i);
  return out;
}

}  // namespace

Gaussian marginal(const Gaussian& joint, const std::vector<Index>& indices) {
  complement(joint.dim(), indices);
  return Gaussian(joint.mean(indices), joint.cov(indices, indices));
}

Gaussian gaussian_condition(const Gaussian& joint, const std::vector<Index>& y_indices,
                            const Vec& y_value) {
  if (static_cast<Index>(y_indices.size()) != y_value.size())
    throw InvalidArgument("gaussian_condition: value and index set sizes differ");
  const std::vector<Index> x_idx = complement(joint.dim(), y_indices);
  const Vec mx = joint.mean(x_idx);
  const Mat sxx = joint.cov(x_idx, x_idx);
  if (y_indices.empty()) return Gaussian(mx, sxx);
  const Mat sxy = joint.cov(x_idx, y_indices);
  const Mat syy = add_jitter(joint.cov(y_indices, y_indices));
  Eigen::LDLT<Mat> ldlt(syy);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0))
    throw NumericalFailure("gaussian_condition: singular conditioning block");
  const Mat gain = ldlt.solve(sxy.transpose()).transpose();
  const Vec resid = y_value - joint.mean(y_indices);
  return Gaussian(mx + gain * resid, symmetrize(sxx - gain * sxy.transpose()));
}

double log_sum_exp(const Vec& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace fbb
