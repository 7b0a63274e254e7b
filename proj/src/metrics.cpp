#include "fbb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace fbb {

Gaussian fit_gaussian(const Mat& samples) {
  const Index n = samples.rows();
  if (n < 2) throw InvalidArgument("fit_gaussian: need at least 2 samples");
  const Vec mean = samples.colwise().mean().transpose();
  const Mat c = samples.rowwise() - mean.transpose();
  Mat cov = (c.transpose() * c) / static_cast<double>(n - 1);
  cov = add_jitter(cov);
  return Gaussian(mean, cov);
}

double kl_gaussian(const Gaussian& p, const Gaussian& q) {
  if (p.dim() != q.dim()) throw InvalidArgument("kl_gaussian: dimension mismatch");
  const Index d = p.dim();
  Eigen::LLT<Mat> lq(symmetrize(q.cov));
  if (lq.info() != Eigen::Success) throw NumericalFailure("kl_gaussian: q covariance is singular");
  Eigen::LLT<Mat> lp(symmetrize(p.cov));
  if (lp.info() != Eigen::Success) throw NumericalFailure("kl_gaussian: p covariance is singular");
  const Mat lqm = lq.matrixL();
  const Mat lpm = lp.matrixL();
  const double logdet_q = 2.0 * lqm.diagonal().array().log().sum();
  const double logdet_p = 2.0 * lpm.diagonal().array().log().sum();
  const Mat a = lq.matrixL().solve(lpm);
  const Vec dm = lq.matrixL().solve(q.mean - p.mean);
  const double kl = 0.5 * (a.squaredNorm() + dm.squaredNorm() - static_cast<double>(d) + logdet_q - logdet_p);
  return std::max(kl, 0.0);
}

double bures_wasserstein_squared(const Gaussian& p, const Gaussian& q) {
  if (p.dim() != q.dim()) throw InvalidArgument("bures_wasserstein: dimension mismatch");
  const Mat sp = sqrtm_psd(p.cov);
  const Mat mid = sqrtm_psd(sp * symmetrize(q.cov) * sp);
  const double b2 = (p.mean - q.mean).squaredNorm() + p.cov.trace() + q.cov.trace() - 2.0 * mid.trace();
  if (!std::isfinite(b2)) throw NumericalFailure("bures_wasserstein: matrix root failed");
  return std::max(b2, 0.0);
}

double bures_wasserstein(const Gaussian& p, const Gaussian& q) { return std::sqrt(bures_wasserstein_squared(p, q)); }

MarginalErrors marginal_maes(const Gaussian& fitted, const Gaussian& truth) {
  if (fitted.dim() != truth.dim()) throw InvalidArgument("marginal_maes: dimension mismatch");
  if (fitted.dim() == 0) return {};
  return {(fitted.mean - truth.mean).cwiseAbs().mean(),
          (fitted.cov.diagonal() - truth.cov.diagonal()).cwiseAbs().mean()};
}

void MetricReport::validate() const {
  for (double v : {kl, kl_reverse, bures, bures_distance, mean_mae, var_mae})
    if (!std::isfinite(v) || v < 0.0) throw NumericalFailure("MetricReport: metric is negative or not finite");
}

std::string MetricReport::csv_header() { return "kl,kl_reverse,bures,bures_distance,mean_mae,var_mae,n_samples"; }

std::string MetricReport::csv_row() const {
  return fmt::format("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{}", kl, kl_reverse, bures, bures_distance,
                     mean_mae, var_mae, n_samples);
}

MetricReport evaluate_samples(const Mat& samples, const Gaussian& truth) {
  if (samples.cols() != truth.dim()) throw InvalidArgument("evaluate_samples: dimension mismatch");
  const Gaussian fit = fit_gaussian(samples);
  MetricReport r;
  r.kl = kl_gaussian(fit, truth);
  r.kl_reverse = kl_gaussian(truth, fit);
  r.bures = bures_wasserstein_squared(fit, truth);
  r.bures_distance = std::sqrt(r.bures);
  const MarginalErrors m = marginal_maes(fit, truth);
  r.mean_mae = m.mean_mae;
  r.var_mae = m.var_mae;
  r.n_samples = samples.rows();
  r.validate();
  return r;
}

}  // namespace fbb
