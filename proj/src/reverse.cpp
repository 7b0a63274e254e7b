#include "fbb/reverse.hpp"

#include <cmath>

namespace fbb {

Vec exact_gaussian_score(const LinearSde& sde, const Gaussian& init, double t, const Vec& x) {
  const Gaussian g = marginal_moments(sde, init, t);
  if (x.size() != g.dim()) throw InvalidArgument("exact_gaussian_score: dimension mismatch");
  Eigen::LLT<Mat> llt(symmetrize(g.cov));
  if (llt.info() != Eigen::Success) throw NumericalFailure("exact_gaussian_score: singular marginal covariance");
  return -llt.solve(x - g.mean);
}

ScoreFunction make_exact_score(const LinearSde& sde, const Gaussian& init) {
  return [sde, init](const Vec& x, double t) { return exact_gaussian_score(sde, init, t, x); };
}

Vec reverse_drift(const DriftFunction& f, const ScoreFunction& score, const Vec& u, double t,
                  double horizon, double sigma) {
  if (t < 0.0 || t > horizon) throw InvalidArgument("reverse_drift: t outside [0, T]");
  const double s = horizon - t;
  return -f(u, s) + sigma * sigma * score(u, s);
}

void ReverseModel::validate() const {
  if (steps() != grid.steps()) throw InvalidArgument("ReverseModel: kernel count must equal grid steps");
  if (reference.dv != dv || reference.du != du) throw InvalidArgument("ReverseModel: reference dimension mismatch");
  for (const auto& k : kernels)
    if (k.dv != dv || k.du != du) throw InvalidArgument("ReverseModel: kernel dimension mismatch");
}

namespace {

Gaussian reference_law(const LinearSde& sde, const Gaussian& init, ReferenceLaw law, double T) {
  if (law == ReferenceLaw::Marginal) return marginal_moments(sde, init, T);
  const Index D = sde.dim();
  return Gaussian(Vec::Zero(D), Mat::Identity(D, D));
}

}  // namespace

ReverseModel discretize_reverse(const LinearSde& sde, const Gaussian& init, const TimeGrid& grid,
                                const ReverseOptions& options) {
  if (init.dim() != sde.dim()) throw InvalidArgument("discretize_reverse: init dimension mismatch");
  const int K = grid.steps();
  const Index D = sde.dim();
  const Index dv = sde.obs_dim();
  const Mat eye = Mat::Identity(D, D);
  ReverseModel m;
  m.grid = grid;
  m.dv = dv;
  m.du = D - dv;
  m.reference = BlockKernel::from_gaussian(dv, reference_law(sde, init, options.reference, grid.horizon()));
  m.kernels.reserve(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k) {
    const double s = grid[K - k];
    const double s_prev = grid[K - k - 1];
    const double dt = s - s_prev;
    const Gaussian ms = marginal_moments(sde, init, s);
    const Mat P = spd_inverse(add_jitter(ms.cov));
    if (options.scheme == ReverseScheme::Euler) {
      const double sg = sde.dispersion(s);
      const Mat M = eye - dt * sde.drift_matrix(s) - sg * sg * dt * P;
      const Vec c = sg * sg * dt * (P * ms.mean);
      m.kernels.push_back(BlockKernel::from_dense(dv, M, c, sg * sg * dt * eye));
    } else {
      const Gaussian mp = marginal_moments(sde, init, s_prev);
      const auto [phi, q] = sde.transition(s_prev, s);
      (void)q;
      const Mat G = mp.cov * phi.transpose() * P;
      const Mat S = symmetrize(mp.cov - G * phi * mp.cov);
      m.kernels.push_back(BlockKernel::from_dense(dv, G, mp.mean - G * ms.mean, S));
    }
  }
  return m;
}

ReverseModel discretize_reverse(const LinearSde& sde, const ScoreFunction& score,
                                const TimeGrid& grid, const Gaussian& reference) {
  const int K = grid.steps();
  const Index D = sde.dim();
  if (reference.dim() != D) throw InvalidArgument("discretize_reverse: reference dimension mismatch");
  const Index dv = sde.obs_dim();
  const Mat eye = Mat::Identity(D, D);
  ReverseModel m;
  m.grid = grid;
  m.dv = dv;
  m.du = D - dv;
  m.reference = BlockKernel::from_gaussian(dv, reference);
  for (int k = 0; k < K; ++k) {
    const double s = grid[K - k];
    const double dt = s - grid[K - k - 1];
    const Vec b = score(Vec::Zero(D), s);
    Mat J(D, D);
    for (Index i = 0; i < D; ++i) J.col(i) = score(eye.col(i), s) - b;
    const double sg = sde.dispersion(s);
    const Mat M = eye - dt * sde.drift_matrix(s) + sg * sg * dt * J;
    m.kernels.push_back(BlockKernel::from_dense(dv, M, sg * sg * dt * b, sg * sg * dt * eye));
  }
  return m;
}

ReverseModel reverse_from_kernels(Index dv, const TimeGrid& grid, const Gaussian& reference,
                                  const std::vector<DenseKernel>& backward) {
  if (static_cast<int>(backward.size()) != grid.steps())
    throw InvalidArgument("reverse_from_kernels: kernel count must equal grid steps");
  ReverseModel m;
  m.grid = grid;
  m.dv = dv;
  m.du = reference.dim() - dv;
  m.reference = BlockKernel::from_gaussian(dv, reference);
  for (const auto& k : backward) m.kernels.push_back(BlockKernel::from_dense(dv, k.M, k.c, k.S));
  m.validate();
  return m;
}

ForwardChain forward_chain(const LinearSde& sde, const TimeGrid& grid) {
  ForwardChain c;
  c.grid = grid;
  c.dy = sde.obs_dim();
  c.dx = sde.dim() - c.dy;
  const Index D = sde.dim();
  for (int k = 0; k < grid.steps(); ++k) {
    const auto [phi, q] = sde.transition(grid[k], grid[k + 1]);
    c.kernels.push_back(BlockKernel::from_dense(c.dy, phi, Vec::Zero(D), q));
  }
  return c;
}

ForwardChain forward_chain(Index dy, const TimeGrid& grid, const std::vector<DenseKernel>& kernels) {
  if (static_cast<int>(kernels.size()) != grid.steps()) throw InvalidArgument("forward_chain: kernel count mismatch");
  ForwardChain c;
  c.grid = grid;
  c.dy = dy;
  c.dx = kernels.front().M.rows() - dy;
  for (const auto& k : kernels) c.kernels.push_back(BlockKernel::from_dense(dy, k.M, k.c, k.S));
  return c;
}

Mat simulate_chain(const ForwardChain& chain, const Vec& z0, Rng& rng) {
  const Index D = chain.dy + chain.dx;
  if (z0.size() != D) throw InvalidArgument("simulate_chain: dimension mismatch");
  const int K = chain.steps();
  Mat path(D, K + 1);
  path.col(0) = z0;
  for (int k = 0; k < K; ++k) {
    const Vec z = path.col(k);
    path.col(k + 1) = chain.kernels[static_cast<size_t>(k)].sample(z.head(chain.dy), z.tail(chain.dx), rng.normals(D));
  }
  return path;
}

double chain_log_density(const ForwardChain& chain, const Mat& path) {
  const int K = chain.steps();
  if (path.cols() != K + 1) throw InvalidArgument("chain_log_density: path length mismatch");
  double lp = 0.0;
  for (int k = 0; k < K; ++k) {
    const Vec a = path.col(k), b = path.col(k + 1);
    lp += chain.kernels[static_cast<size_t>(k)].log_density(a.head(chain.dy), a.tail(chain.dx), b.head(chain.dy),
                                                            b.tail(chain.dx));
  }
  return lp;
}

double reverse_log_density(const ReverseModel& model, const Mat& rev_path) {
  const int K = model.steps();
  if (rev_path.cols() != K + 1 || rev_path.rows() != model.dv + model.du)
    throw InvalidArgument("reverse_log_density: path shape mismatch");
  const Vec z0 = rev_path.col(0);
  double lp = model.reference.log_density(Vec::Zero(model.dv), Vec::Zero(model.du), z0.head(model.dv),
                                          z0.tail(model.du));
  for (int k = 0; k < K; ++k) {
    const Vec a = rev_path.col(k), b = rev_path.col(k + 1);
    lp += model.kernels[static_cast<size_t>(k)].log_density(a.head(model.dv), a.tail(model.du), b.head(model.dv),
                                                            b.tail(model.du));
  }
  return lp;
}

double reverse_log_evidence(const ReverseModel& model, const Mat& v, const Vec* u0) {
  const int K = model.steps();
  const Index dv = model.dv, du = model.du;
  if (v.rows() != dv || v.cols() != K + 1) throw InvalidArgument("reverse_log_evidence: observation shape mismatch");
  Vec m;
  Mat P;
  if (u0 != nullptr) {
    m = *u0;
    P = Mat::Zero(du, du);
  } else {
    const Gaussian ref(model.reference.dense_offset(), model.reference.dense_cov());
    std::vector<Index> vi(static_cast<size_t>(dv));
    for (Index i = 0; i < dv; ++i) vi[static_cast<size_t>(i)] = i;
    const Gaussian cond = gaussian_condition(ref, vi, v.col(0));
    m = cond.mean;
    P = cond.cov;
  }
  double lz = 0.0;
  for (int k = 0; k < K; ++k) {
    const BlockKernel& ker = model.kernels[static_cast<size_t>(k)];
    const Mat M = ker.dense_map();
    const Mat S = ker.dense_cov();
    const Mat Mu = M.rightCols(du);
    const Vec mean = M.leftCols(dv) * v.col(k) + Mu * m + ker.dense_offset();
    const Mat cov = symmetrize(Mu * P * Mu.transpose() + S);
    Gaussian joint(mean, cov);
    lz += log_density(Gaussian(mean.head(dv), cov.topLeftCorner(dv, dv)), v.col(k + 1));
    std::vector<Index> vi(static_cast<size_t>(dv));
    for (Index i = 0; i < dv; ++i) vi[static_cast<size_t>(i)] = i;
    const Gaussian cond = gaussian_condition(joint, vi, v.col(k + 1));
    m = cond.mean;
    P = cond.cov;
  }
  return lz;
}

Mat sample_reverse(const ReverseModel& model, Rng& rng) {
  const int K = model.steps();
  const Index dv = model.dv, du = model.du;
  Mat path(dv + du, K + 1);
  path.col(0) = model.reference.sample(Vec::Zero(dv), Vec::Zero(du), rng.normals(dv + du));
  for (int k = 0; k < K; ++k) {
    const Vec z = path.col(k);
    path.col(k + 1) = model.kernels[static_cast<size_t>(k)].sample(z.head(dv), z.tail(du), rng.normals(dv + du));
  }
  return path;
}

Vec csgm_conditional_drift(const LinearSde& sde_in, const JointGaussianTarget& target, const Vec& y,
                           const Vec& u, double t) {
  const Index dx = target.x_dim;
  const LinearSde sde = sde_in.dim() == dx ? sde_in : sde_in.block(sde_in.obs_dim(), dx);
  if (u.size() != dx || y.size() != target.y_dim) throw InvalidArgument("csgm_conditional_drift: dimension mismatch");
  const double T = sde.horizon();
  if (t < 0.0 || t > T) throw InvalidArgument("csgm_conditional_drift: t outside [0, T]");
  const double s = T - t;
  const Gaussian prior = target.x_marginal();
  const Gaussian ms = marginal_moments(sde, prior, s);
  const Mat P = spd_inverse(ms.cov);
  const Vec score = -P * (u - ms.mean);
  Mat phi = Mat::Identity(dx, dx);
  if (s > 0.0) phi = sde.transition(0.0, s).first;
  const Mat c_yx = target.joint.cov.bottomLeftCorner(target.y_dim, dx);
  const Mat c_yxs = c_yx * phi.transpose();  // Cov(Y, X_s)
  const Mat H = c_yxs * P;
  const Mat R = symmetrize(target.joint.cov.bottomRightCorner(target.y_dim, target.y_dim) - H * c_yxs.transpose());
  const Vec resid = y - target.joint.mean.tail(target.y_dim) - H * (u - ms.mean);
  const Vec lik_grad = H.transpose() * spd_inverse(add_jitter(R)) * resid;
  const double sg = sde.dispersion(s);
  return -sde.drift(u, s) + sg * sg * (score + lik_grad);
}

GaussianTwist gp_observation_twist(const LinearSde& sde, const Gaussian& prior, const Mat& xi,
                                   const TimeGrid& grid) {
  if (prior.dim() != sde.dim()) throw InvalidArgument("gp_observation_twist: dimension mismatch");
  const int K = grid.steps();
  const Index d = sde.dim();
  GaussianTwist tw;
  for (int k = 0; k <= K; ++k) {
    const double s = grid[K - k];
    if (s == 0.0) {
      tw.H.push_back(Mat::Identity(d, d));
      tw.h.push_back(Vec::Zero(d));
    } else {
      const Gaussian ms = marginal_moments(sde, prior, s);
      const Mat phi = sde.transition(0.0, s).first;
      const Mat H = prior.cov * phi.transpose() * spd_inverse(add_jitter(ms.cov));
      tw.H.push_back(H);
      tw.h.push_back(prior.mean - H * ms.mean);
    }
    tw.R.push_back(xi);
  }
  return tw;
}

namespace {

TwistedStep make_twisted_step(const Mat& B, const Mat& S, const Mat* H, const Vec* h, const Mat* R, const Vec& y) {
  const Index du = S.rows();
  TwistedStep st;
  st.b_map = LinearOp::from_dense(B);
  if (H == nullptr) {
    st.post_map = st.b_map;
    st.post_e = LinearOp::scaled(du, 1.0);
    st.post_shift = Vec::Zero(du);
    st.post_cov = CovOp::from_dense(S);
    return st;
  }
  const Mat spred = symmetrize(*H * S * H->transpose() + *R);
  const Mat kt = (spd_inverse(add_jitter(spred)) * (*H * S)).transpose();
  const Mat ikh = Mat::Identity(du, du) - kt * *H;
  st.post_map = LinearOp::from_dense(ikh * B);
  st.post_e = LinearOp::from_dense(ikh);
  st.post_shift = kt * (y - *h);
  st.post_cov = CovOp::from_dense(symmetrize(S - kt * *H * S));
  st.pred_map = LinearOp::from_dense(*H * B);
  st.pred_e = LinearOp::from_dense(*H);
  st.pred_shift = y - *h;
  st.pred_cov = CovOp::from_dense(spred);
  return st;
}

}  // namespace

TwistedModel twisted_kernels(const ReverseModel& reverse, const GaussianTwist* twist, const Vec& y) {
  reverse.validate();
  const int K = reverse.steps();
  const Index du = reverse.du;
  if (twist != nullptr) {
    if (static_cast<int>(twist->H.size()) != K + 1 || static_cast<int>(twist->h.size()) != K + 1 ||
        static_cast<int>(twist->R.size()) != K + 1)
      throw InvalidArgument("twisted_kernels: twist must cover steps 0..K");
    for (int k = 0; k <= K; ++k) {
      const auto ks = static_cast<size_t>(k);
      if (twist->H[ks].cols() != du || twist->H[ks].rows() != y.size())
        throw InvalidArgument("twisted_kernels: twist dimension mismatch");
    }
  }
  TwistedModel tm;
  tm.base = reverse;
  tm.y = y;
  tm.twisted = twist != nullptr;
  const BlockKernel& ref = reverse.reference;
  const Mat s0 = ref.s_u.to_dense();
  if (tm.twisted)
    tm.init = make_twisted_step(Mat::Zero(du, du), s0, &twist->H[0], &twist->h[0], &twist->R[0], y);
  else
    tm.init = make_twisted_step(Mat::Zero(du, du), s0, nullptr, nullptr, nullptr, y);
  for (int k = 0; k < K; ++k) {
    const BlockKernel& ker = reverse.kernels[static_cast<size_t>(k)];
    const Mat B = ker.a_uu.to_dense() - ker.gain.to_dense() * ker.a_vu.to_dense();
    const Mat S = ker.s_u.to_dense();
    const auto kn = static_cast<size_t>(k + 1);
    if (tm.twisted)
      tm.steps.push_back(make_twisted_step(B, S, &twist->H[kn], &twist->h[kn], &twist->R[kn], y));
    else
      tm.steps.push_back(make_twisted_step(B, S, nullptr, nullptr, nullptr, y));
  }
  if (tm.twisted) {
    for (int k = 0; k <= K; ++k) {
      const auto ks = static_cast<size_t>(k);
      tm.twist_h.push_back(LinearOp::from_dense(twist->H[ks]));
      tm.twist_shift.push_back(y - twist->h[ks]);
      tm.twist_cov.push_back(CovOp::from_dense(twist->R[ks]));
    }
  }
  return tm;
}

ReverseModel reverse_model_from_ssm(const LinearSsm& ssm) {
  ssm.validate();
  const int K = ssm.steps();
  const Index dx = ssm.state_dim(), dy = ssm.obs_dim();
  const Index D = dx + dy;
  ReverseModel m;
  m.grid = make_uniform_grid(static_cast<double>(K), K);
  m.dv = dy;
  m.du = dx;
  Gaussian ref(Vec::Zero(D), Mat::Zero(D, D));
  ref.cov.topLeftCorner(dy, dy).setIdentity();
  ref.mean.tail(dx) = ssm.init.mean;
  ref.cov.bottomRightCorner(dx, dx) = ssm.init.cov;
  m.reference = BlockKernel::from_gaussian(dy, ref);
  for (int k = 0; k < K; ++k) {
    const auto ks = static_cast<size_t>(k);
    Mat M = Mat::Zero(D, D);
    M.topRightCorner(dy, dx) = ssm.H[ks];
    M.bottomRightCorner(dx, dx) = ssm.A[ks];
    Vec c(D);
    c << ssm.d[ks], ssm.b[ks];
    Mat S = Mat::Zero(D, D);
    S.topLeftCorner(dy, dy) = ssm.R[ks];
    S.bottomRightCorner(dx, dx) = ssm.Q[ks];
    m.kernels.push_back(BlockKernel::from_dense(dy, M, c, S));
  }
  return m;
}

Mat ssm_observation_path(const std::vector<Vec>& obs) {
  if (obs.empty()) throw InvalidArgument("ssm_observation_path: no observations");
  const Index dy = obs.front().size();
  Mat v = Mat::Zero(dy, static_cast<Index>(obs.size()) + 1);
  for (size_t k = 0; k < obs.size(); ++k) v.col(static_cast<Index>(k) + 1) = obs[k];
  return v;
}

}  // namespace fbb
