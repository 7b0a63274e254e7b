#include "fbb/models.hpp"

#include <cmath>

namespace fbb {

GpRegressionSpec GpRegressionSpec::uniform(Index n, double lo, double hi, double noise_var) {
  if (n < 1) throw InvalidArgument("GP spec needs at least one test point");
  GpRegressionSpec s;
  s.test_points = n == 1 ? Vec(Vec::Constant(1, lo)) : Vec(Vec::LinSpaced(n, lo, hi));
  s.obs_noise = Vec::Constant(n, noise_var);
  return s;
}

void GpRegressionSpec::validate() const {
  if (test_points.size() < 1) throw InvalidArgument("GP spec has no test points");
  if (!(lengthscale > 0.0) || !(magnitude > 0.0)) throw InvalidArgument("GP lengthscale and magnitude must be positive");
  if (obs_noise.size() != test_points.size()) throw InvalidArgument("GP noise size must match test points");
  if (!(obs_noise.minCoeff() > 0.0)) throw InvalidArgument("GP observation noise must be positive");
}

Gaussian JointGaussianTarget::x_marginal() const {
  return Gaussian(joint.mean.head(x_dim), joint.cov.topLeftCorner(x_dim, x_dim));
}

Gaussian JointGaussianTarget::y_marginal() const {
  return Gaussian(joint.mean.tail(y_dim), joint.cov.bottomRightCorner(y_dim, y_dim));
}

Gaussian JointGaussianTarget::yx_joint() const {
  const Index D = x_dim + y_dim;
  std::vector<Index> perm(static_cast<size_t>(D));
  for (Index i = 0; i < y_dim; ++i) perm[static_cast<size_t>(i)] = x_dim + i;
  for (Index i = 0; i < x_dim; ++i) perm[static_cast<size_t>(y_dim + i)] = i;
  return Gaussian(joint.mean(perm), joint.cov(perm, perm));
}

Mat exponential_kernel(const Vec& tau, double lengthscale, double magnitude) {
  const Index n = tau.size();
  Mat c(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      c(i, j) = magnitude * magnitude * std::exp(-std::abs(tau(i) - tau(j)) / lengthscale);
  return c;
}

JointGaussianTarget build_gp_joint(const GpRegressionSpec& spec) {
  spec.validate();
  const Index n = spec.test_points.size();
  const Mat c = exponential_kernel(spec.test_points, spec.lengthscale, spec.magnitude);
  Mat cov(2 * n, 2 * n);
  cov << c, c, c, c;
  cov.bottomRightCorner(n, n).diagonal() += spec.obs_noise;
  return JointGaussianTarget{Gaussian(Vec::Zero(2 * n), cov), n, n};
}

Gaussian exact_posterior(const JointGaussianTarget& target, const Vec& y) {
  if (y.size() != target.y_dim) throw InvalidArgument("exact_posterior: observation dimension mismatch");
  std::vector<Index> idx(static_cast<size_t>(target.y_dim));
  for (Index i = 0; i < target.y_dim; ++i) idx[static_cast<size_t>(i)] = target.x_dim + i;
  return gaussian_condition(target.joint, idx, y);
}

Mat wishart_reference(Index d, const RngStreamKey& key, bool rank_one) {
  if (d < 1) throw InvalidArgument("wishart_reference: d must be positive");
  Rng rng(key);
  const Index m = rank_one ? 1 : d;
  const Mat q = rng.normals(d, m);
  return symmetrize(q * q.transpose());
}

std::vector<DenseKernel> forward_kernels(const GaussianProcessMoments& p, const std::vector<double>& times) {
  std::vector<DenseKernel> out;
  for (size_t k = 0; k + 1 < times.size(); ++k) {
    const double s = times[k], t = times[k + 1];
    const Mat css = p.cov(s, s);
    const Mat cts = p.cov(s, t).transpose();
    const Mat m = (spd_inverse(add_jitter(css)) * cts.transpose()).transpose();
    out.push_back({m, p.mean(t) - m * p.mean(s), symmetrize(p.cov(t, t) - m * cts.transpose())});
  }
  return out;
}

std::vector<DenseKernel> backward_kernels(const GaussianProcessMoments& p, const std::vector<double>& times) {
  std::vector<DenseKernel> out;
  for (size_t j = times.size() - 1; j >= 1; --j) {
    const double t = times[j], s = times[j - 1];
    const Mat ctt = p.cov(t, t);
    const Mat cst = p.cov(s, t);
    const Mat m = (spd_inverse(add_jitter(ctt)) * cst.transpose()).transpose();
    out.push_back({m, p.mean(s) - m * p.mean(t), symmetrize(p.cov(s, s) - m * cst.transpose())});
  }
  return out;
}

void GaussianSbSpec::validate() const {
  if (start.dim() != reference_end.dim()) throw InvalidArgument("Gaussian SB endpoints differ in dimension");
  if (!(ref_dispersion > 0.0) || !(horizon > 0.0)) throw InvalidArgument("Gaussian SB needs positive dispersion and horizon");
  start.validate();
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(reference_end.cov), Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues().minCoeff() > 0.0)) throw InvalidArgument("Gaussian SB reference covariance must be positive definite");
  Eigen::SelfAdjointEigenSolver<Mat> es0(symmetrize(start.cov), Eigen::EigenvaluesOnly);
  if (!(es0.eigenvalues().minCoeff() > 0.0)) throw InvalidArgument("Gaussian SB start covariance must be positive definite");
}

GaussianSb::GaussianSb(GaussianSbSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const Index d = spec_.start.dim();
  const double s = spec_.ref_dispersion * spec_.ref_dispersion * spec_.horizon;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(spec_.start.cov));
  const Vec ev = es.eigenvalues();
  const Mat& v = es.eigenvectors();
  const Mat a = v * ev.cwiseSqrt().asDiagonal() * v.transpose();
  const Mat a_inv = v * ev.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
  const Mat inner = 4.0 * a * spec_.reference_end.cov * a + s * s * Mat::Identity(d, d);
  const Mat dm = sqrtm_psd(inner);
  coupling_ = 0.5 * (a * dm * a_inv - s * Mat::Identity(d, d));
}

Vec GaussianSb::mean(double t) const {
  const double T = spec_.horizon;
  const double b = t / T;
  return (1.0 - b) * spec_.start.mean + b * spec_.reference_end.mean;
}

Mat GaussianSb::cov(double s, double t) const {
  const double T = spec_.horizon;
  const bool swap = s > t;
  const double lo = swap ? t : s, hi = swap ? s : t;
  const double as = 1.0 - lo / T, bs = lo / T, at = 1.0 - hi / T, bt = hi / T;
  const Index d = spec_.start.dim();
  const double sig2 = spec_.ref_dispersion * spec_.ref_dispersion;
  Mat c = as * at * spec_.start.cov + as * bt * coupling_ + bs * at * coupling_.transpose() +
          bs * bt * spec_.reference_end.cov + sig2 * lo * (T - hi) / T * Mat::Identity(d, d);
  return swap ? Mat(c.transpose()) : c;
}

GaussianProcessMoments GaussianSb::moments() const {
  return GaussianProcessMoments{[this](double t) { return mean(t); },
                                [this](double s, double t) { return cov(s, t); }, spec_.start.dim()};
}

Gaussian GaussianSb::terminal_given_initial(const Vec& x0) const {
  const Mat g = (spd_inverse(add_jitter(spec_.start.cov)) * coupling_).transpose();
  return Gaussian(spec_.reference_end.mean + g * (x0 - spec_.start.mean),
                  symmetrize(spec_.reference_end.cov - g * coupling_));
}

SbKernels gaussian_sb(const GaussianSbSpec& spec, const std::vector<double>& times) {
  const GaussianSb sb(spec);
  const GaussianProcessMoments m = sb.moments();
  return SbKernels{forward_kernels(m, times), backward_kernels(m, times)};
}

void LinearSsm::validate() const {
  const size_t K = A.size();
  if (K < 1) throw InvalidArgument("LinearSsm needs at least one step");
  if (b.size() != K || Q.size() != K || H.size() != K || d.size() != K || R.size() != K)
    throw InvalidArgument("LinearSsm: per-step arrays differ in length");
  const Index n = init.dim();
  for (size_t k = 0; k < K; ++k) {
    if (A[k].rows() != n || A[k].cols() != n || Q[k].rows() != n || b[k].size() != n)
      throw InvalidArgument("LinearSsm: transition dimension mismatch");
    if (H[k].cols() != n || H[k].rows() != R[k].rows() || d[k].size() != H[k].rows())
      throw InvalidArgument("LinearSsm: observation dimension mismatch");
  }
}

LinearSsm LinearSsm::time_invariant(const Gaussian& init, const Mat& A, const Mat& Q, const Mat& H,
                                    const Mat& R, int K) {
  LinearSsm s;
  s.init = init;
  const auto n = static_cast<size_t>(K);
  s.A.assign(n, A);
  s.b.assign(n, Vec::Zero(A.rows()));
  s.Q.assign(n, Q);
  s.H.assign(n, H);
  s.d.assign(n, Vec::Zero(H.rows()));
  s.R.assign(n, R);
  s.validate();
  return s;
}

namespace {

struct Filtered {
  KalmanResult res;
  std::vector<Gaussian> predicted;  // x_k | y_{0:k-1}, k = 0..K
};

Filtered run_filter(const LinearSsm& ssm, const std::vector<Vec>& obs) {
  ssm.validate();
  const int K = ssm.steps();
  if (static_cast<int>(obs.size()) != K) throw InvalidArgument("kalman: observation count must equal step count");
  Filtered f;
  Vec m = ssm.init.mean;
  Mat P = ssm.init.cov;
  for (int k = 0; k < K; ++k) {
    const auto ks = static_cast<size_t>(k);
    if (obs[ks].size() != ssm.H[ks].rows()) throw InvalidArgument("kalman: observation dimension mismatch");
    f.predicted.emplace_back(m, P);
    const Mat S = symmetrize(ssm.H[ks] * P * ssm.H[ks].transpose() + ssm.R[ks]);
    Eigen::LLT<Mat> llt(S);
    if (llt.info() != Eigen::Success) throw NumericalFailure("kalman: singular innovation covariance");
    const Vec innov = obs[ks] - ssm.H[ks] * m - ssm.d[ks];
    const Mat Lm = llt.matrixL();
    f.res.log_evidence += -0.5 * (llt.matrixL().solve(innov).squaredNorm() +
                                  2.0 * Lm.diagonal().array().log().sum() +
                                  static_cast<double>(S.rows()) * kLog2Pi);
    const Mat gain = llt.solve(ssm.H[ks] * P).transpose();
    m = m + gain * innov;
    P = symmetrize(P - gain * S * gain.transpose());
    f.res.filtered.emplace_back(m, P);
    m = ssm.A[ks] * m + ssm.b[ks];
    P = symmetrize(ssm.A[ks] * P * ssm.A[ks].transpose() + ssm.Q[ks]);
  }
  f.predicted.emplace_back(m, P);
  return f;
}

Mat smoother_gain(const Gaussian& filt, const Mat& A, const Gaussian& pred_next) {
  return (spd_inverse(add_jitter(pred_next.cov)) * (A * filt.cov)).transpose();
}

}  // namespace

KalmanResult kalman_evidence_and_smoother(const LinearSsm& ssm, const std::vector<Vec>& obs) {
  Filtered f = run_filter(ssm, obs);
  const int K = ssm.steps();
  std::vector<Gaussian> sm(static_cast<size_t>(K) + 1);
  sm[static_cast<size_t>(K)] = f.predicted[static_cast<size_t>(K)];
  for (int k = K - 1; k >= 0; --k) {
    const auto ks = static_cast<size_t>(k);
    const Gaussian& filt = f.res.filtered[ks];
    const Gaussian& pred = f.predicted[ks + 1];
    const Mat g = smoother_gain(filt, ssm.A[ks], pred);
    sm[ks] = Gaussian(filt.mean + g * (sm[ks + 1].mean - pred.mean),
                      symmetrize(filt.cov + g * (sm[ks + 1].cov - pred.cov) * g.transpose()));
  }
  f.res.smoothed = std::move(sm);
  return f.res;
}

Mat ffbs_sample(const LinearSsm& ssm, const std::vector<Vec>& obs, const KalmanResult& kr, Rng& rng) {
  const int K = ssm.steps();
  if (static_cast<int>(kr.filtered.size()) != K) throw InvalidArgument("ffbs_sample: Kalman result does not match model");
  (void)obs;
  const Index n = ssm.state_dim();
  Mat out(K + 1, n);
  Vec x = sample(kr.smoothed[static_cast<size_t>(K)], rng.normals(n));
  out.row(K) = x.transpose();
  for (int k = K - 1; k >= 0; --k) {
    const auto ks = static_cast<size_t>(k);
    const Gaussian& filt = kr.filtered[ks];
    const Gaussian pred(ssm.A[ks] * filt.mean + ssm.b[ks],
                        symmetrize(ssm.A[ks] * filt.cov * ssm.A[ks].transpose() + ssm.Q[ks]));
    const Mat g = smoother_gain(filt, ssm.A[ks], pred);
    const Gaussian cond(filt.mean + g * (x - pred.mean), symmetrize(filt.cov - g * pred.cov * g.transpose()));
    x = sample(cond, rng.normals(n));
    out.row(k) = x.transpose();
  }
  return out;
}

std::pair<Mat, std::vector<Vec>> simulate_ssm(const LinearSsm& ssm, Rng& rng) {
  ssm.validate();
  const int K = ssm.steps();
  const Index n = ssm.state_dim();
  Mat xs(K + 1, n);
  std::vector<Vec> ys;
  Vec x = sample(ssm.init, rng.normals(n));
  for (int k = 0; k < K; ++k) {
    const auto ks = static_cast<size_t>(k);
    xs.row(k) = x.transpose();
    const Index m = ssm.H[ks].rows();
    ys.push_back(sample(Gaussian(ssm.H[ks] * x + ssm.d[ks], ssm.R[ks]), rng.normals(m)));
    x = sample(Gaussian(ssm.A[ks] * x + ssm.b[ks], ssm.Q[ks]), rng.normals(n));
  }
  xs.row(K) = x.transpose();
  return {xs, ys};
}

Gaussian ssm_observation_joint(const LinearSsm& ssm) {
  ssm.validate();
  const int K = ssm.steps();
  const Index n = ssm.state_dim();
  // Stack x_0..x_{K-1}: mean and covariance by forward recursion.
  std::vector<Vec> mx(static_cast<size_t>(K));
  Mat cx = Mat::Zero(K * n, K * n);
  Vec m = ssm.init.mean;
  Mat P = ssm.init.cov;
  for (int k = 0; k < K; ++k) {
    mx[static_cast<size_t>(k)] = m;
    cx.block(k * n, k * n, n, n) = P;
    // Cov(x_j, x_k) for j < k: Cov(x_j, x_{k-1}) A_{k-1}^T.
    for (int j = 0; j < k; ++j)
      cx.block(j * n, k * n, n, n) = cx.block(j * n, (k - 1) * n, n, n) * ssm.A[static_cast<size_t>(k - 1)].transpose();
    m = ssm.A[static_cast<size_t>(k)] * m + ssm.b[static_cast<size_t>(k)];
    P = ssm.A[static_cast<size_t>(k)] * P * ssm.A[static_cast<size_t>(k)].transpose() + ssm.Q[static_cast<size_t>(k)];
  }
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < k; ++j) cx.block(k * n, j * n, n, n) = cx.block(j * n, k * n, n, n).transpose();
  const Index my = ssm.obs_dim();
  Mat H = Mat::Zero(K * my, K * n);
  Mat R = Mat::Zero(K * my, K * my);
  Vec mean(K * my);
  for (int k = 0; k < K; ++k) {
    const auto ks = static_cast<size_t>(k);
    H.block(k * my, k * n, my, n) = ssm.H[ks];
    R.block(k * my, k * my, my, my) = ssm.R[ks];
    mean.segment(k * my, my) = ssm.H[ks] * mx[ks] + ssm.d[ks];
  }
  return Gaussian(mean, symmetrize(H * cx * H.transpose() + R));
}

}  // namespace fbb
