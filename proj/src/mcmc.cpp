#include "fbb/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fbb {

void ConditionalProblem::validate() const {
  reverse.validate();
  if (forward.steps() != reverse.steps()) throw InvalidArgument("ConditionalProblem: step counts differ");
  if (forward.dy != reverse.dv || forward.dx != reverse.du)
    throw InvalidArgument("ConditionalProblem: forward and reverse blocks differ");
  if (y.size() != forward.dy) throw InvalidArgument("ConditionalProblem: observation dimension mismatch");
  if (bridge != nullptr && bridge->grid().steps() != forward.steps())
    throw InvalidArgument("ConditionalProblem: bridge grid mismatch");
}

Mat reverse_columns(const Mat& path) { return path.rowwise().reverse(); }

PcnCoefficients pcn_coefficients(double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw InvalidArgument("pcn: delta must be positive and finite");
  // 1 - (2/(2+d))^2 = d(4+d)/(2+d)^2, without cancellation for small d.
  return {2.0 / (2.0 + delta), std::sqrt(delta * (4.0 + delta)) / (2.0 + delta)};
}

Mat pcn_propose(const Mat& eta, double delta, const Mat& fresh) {
  if (eta.rows() != fresh.rows() || eta.cols() != fresh.cols())
    throw InvalidArgument("pcn_propose: shape mismatch");
  const PcnCoefficients c = pcn_coefficients(delta);
  return c.rho * eta + c.noise * fresh;
}

Mat pcn_propose(const Mat& eta, double delta, const RngStreamKey& key) {
  return pcn_propose(eta, delta, standard_normals(key, eta.rows(), eta.cols()));
}

namespace {

Mat forward_path(const ConditionalProblem& p, const Vec& x0, Rng& rng) {
  Vec z0(p.y_dim() + p.x_dim());
  z0 << p.y, x0;
  if (p.bridge != nullptr) return p.bridge->sample_path(z0, rng).transpose();
  return simulate_chain(p.forward, z0, rng);
}

}  // namespace

GibbsState gibbs_init(const ConditionalProblem& problem, const Vec& x0_guess, int n_particles,
                      const RngStreamKey& key) {
  problem.validate();
  if (x0_guess.size() != problem.x_dim()) throw InvalidArgument("gibbs_init: x0 dimension mismatch");
  Rng rng(key);
  Mat fwd = forward_path(problem, x0_guess, rng);
  const Mat rev = reverse_columns(fwd);
  const Index dy = problem.y_dim(), dx = problem.x_dim();
  const FilterResult res = particle_filter(problem.reverse, rev.topRows(dy), n_particles, rng);
  GibbsState st;
  st.x0 = res.path.col(problem.steps());
  fwd.bottomRows(dx) = reverse_columns(res.path);
  st.path = std::move(fwd);
  return st;
}

GibbsState gibbs_csmc_step(const GibbsState& state, const ConditionalProblem& problem, int n_particles,
                           const RngStreamKey& key, const GibbsOptions& options) {
  problem.validate();
  if (state.x0.size() != problem.x_dim()) throw InvalidArgument("gibbs_csmc_step: x0 dimension mismatch");
  if (!state.x0.allFinite()) throw NumericalFailure("gibbs_csmc_step: non-finite state");
  Rng rng(key);
  const Index dy = problem.y_dim(), dx = problem.x_dim();
  GibbsState next;
  next.iteration = state.iteration + 1;
  next.mh_accepts = state.mh_accepts;
  next.mh_trials = state.mh_trials;
  Mat fwd = forward_path(problem, state.x0, rng);
  if (options.mh_correction && state.path.cols() == fwd.cols()) {
    const MhDecision d = mh_path_correction(problem, fwd, state.path, rng);
    ++next.mh_trials;
    if (d.accept)
      ++next.mh_accepts;
    else
      fwd = state.path;
  }
  const Mat rev = reverse_columns(fwd);
  CsmcOptions co;
  co.scheme = options.scheme;
  co.fixed_u0 = !options.trusted_reference_init;
  co.keep_history = options.keep_history;
  FilterResult res = csmc_kernel(problem.reverse, rev.topRows(dy), rev.bottomRows(dx), n_particles, rng, co);
  next.x0 = res.path.col(problem.steps());
  fwd.bottomRows(dx) = reverse_columns(res.path);
  next.path = std::move(fwd);
  next.last_history = std::move(res.history);
  return next;
}

double mh_path_log_ratio(double log_q_star, double log_p_star, double log_q_prev, double log_p_prev) {
  const double r = (log_q_star - log_p_star) - (log_q_prev - log_p_prev);
  if (std::isnan(r) || !std::isfinite(log_q_star) || !std::isfinite(log_p_star) || !std::isfinite(log_q_prev) ||
      !std::isfinite(log_p_prev))
    throw NumericalFailure("mh_path_correction: non-finite log density");
  return r;
}

MhDecision mh_path_correction(double log_q_star, double log_p_star, double log_q_prev, double log_p_prev,
                              Rng& rng) {
  MhDecision d;
  d.log_alpha = std::min(0.0, mh_path_log_ratio(log_q_star, log_p_star, log_q_prev, log_p_prev));
  d.accept = d.log_alpha >= 0.0 || std::log(rng.uniform()) < d.log_alpha;
  return d;
}

MhDecision mh_path_correction(const ConditionalProblem& problem, const Mat& proposed, const Mat& previous,
                              Rng& rng) {
  const double q_star = reverse_log_density(problem.reverse, reverse_columns(proposed));
  const double p_star = chain_log_density(problem.forward, proposed);
  const double q_prev = reverse_log_density(problem.reverse, reverse_columns(previous));
  const double p_prev = chain_log_density(problem.forward, previous);
  return mh_path_correction(q_star, p_star, q_prev, p_prev, rng);
}

double pmmh_general_acceptance(double log_z_star, double log_z_prev, double log_q_prev_given_star,
                               double log_q_star_given_prev, double log_p_star, double log_p_prev) {
  return (log_z_star - log_z_prev) + (log_q_prev_given_star - log_q_star_given_prev) + (log_p_star - log_p_prev);
}

Mat replay_noise(const PmcmcState& state, Index rows, Index cols) {
  Mat eta = standard_normals(state.initial_key, rows, cols);
  for (const auto& [key, delta] : state.lineage) eta = pcn_propose(eta, delta, key);
  return eta;
}

Mat materialize_observation_path(const ForwardChain& chain, const Vec& y0, const Mat& eta) {
  const int K = chain.steps();
  if (y0.size() != chain.dy || eta.rows() != chain.dy || eta.cols() != K)
    throw InvalidArgument("materialize_observation_path: shape mismatch");
  Mat y(chain.dy, K + 1);
  y.col(0) = y0;
  for (int k = 0; k < K; ++k) {
    const BlockKernel& ker = chain.kernels[static_cast<size_t>(k)];
    if (ker.a_vu.kind() != LinearOp::Kind::Zero)
      throw UnsupportedOperation("pseudo-marginal sampler needs separable forward dynamics");
    Mat col = ker.a_vv.apply(y.col(k));
    col.col(0) += ker.c_v;
    ker.s_v.add_noise(eta.col(k), col);
    y.col(k + 1) = col.col(0);
  }
  return y;
}

namespace {

struct PathEvaluation {
  Vec x0;
  double log_z = 0.0;
  double log_target = 0.0;
};

PathEvaluation evaluate_path(const ConditionalProblem& p, const Mat& eta, int n, const RngStreamKey& key,
                             const PmcmcOptions& o) {
  const Mat v = reverse_columns(materialize_observation_path(p.forward, p.y, eta));
  Rng rng(key);
  FilterOptions fo;
  fo.scheme = o.scheme;
  const FilterResult res = particle_filter(p.reverse, v, n, rng, fo);
  PathEvaluation e;
  e.x0 = res.path.col(p.steps());
  e.log_z = o.exact_evidence ? reverse_log_evidence(p.reverse, v) : res.log_z;
  const BlockKernel& ref = p.reverse.reference;
  const double log_ref_v = ref.log_bv(v.col(0), Vec::Zero(ref.dv), Mat::Zero(ref.du, 1))(0);
  // The forward density of Y is -|eta|^2 / 2 up to a constant that cancels.
  e.log_target = e.log_z + log_ref_v + 0.5 * eta.squaredNorm();
  if (!std::isfinite(e.log_target)) throw NumericalFailure("pmcmc: non-finite log target");
  return e;
}

void check_separable(const ConditionalProblem& p) {
  for (const auto& k : p.forward.kernels)
    if (k.a_vu.kind() != LinearOp::Kind::Zero)
      throw UnsupportedOperation("pseudo-marginal sampler needs separable forward dynamics");
}

}  // namespace

PmcmcState pmcmc_init(const ConditionalProblem& problem, int n_particles, const RngStreamKey& key,
                      const PmcmcOptions& options) {
  problem.validate();
  check_separable(problem);
  PmcmcState st;
  st.initial_key = key.child(0);
  const Mat eta = standard_normals(st.initial_key, problem.y_dim(), problem.steps());
  const PathEvaluation e = evaluate_path(problem, eta, n_particles, key.child(1), options);
  st.x0 = e.x0;
  st.log_z = e.log_z;
  st.log_target = e.log_target;
  if (options.cache_noise) st.eta = eta;
  return st;
}

PmcmcState pmcmc_step(const PmcmcState& state, const ConditionalProblem& problem, int n_particles, double delta,
                      const RngStreamKey& key, const PmcmcOptions& options) {
  problem.validate();
  check_separable(problem);
  pcn_coefficients(delta);
  const Index dy = problem.y_dim();
  const int K = problem.steps();
  const Mat eta = state.eta.size() > 0 ? state.eta : replay_noise(state, dy, K);
  const RngStreamKey noise_key = key.child(0);
  const Mat proposal = pcn_propose(eta, delta, noise_key);
  const PathEvaluation e = evaluate_path(problem, proposal, n_particles, key.child(1), options);
  PmcmcState next = state;
  ++next.step_count;
  Rng rng(key.child(2));
  const double log_alpha = e.log_target - state.log_target;
  if (log_alpha >= 0.0 || std::log(rng.uniform()) < log_alpha) {
    ++next.accept_count;
    next.x0 = e.x0;
    next.log_z = e.log_z;
    next.log_target = e.log_target;
    next.lineage.emplace_back(noise_key, delta);
    if (options.cache_noise)
      next.eta = proposal;
    else
      next.eta.resize(0, 0);
  }
  return next;
}

ChainOutput run_chain(const ChainKernel& kernel, const Vec& init, int iterations, int burn_in, int thin) {
  if (iterations <= burn_in || burn_in < 0) throw InvalidArgument("run_chain: need iterations > burn_in >= 0");
  if (thin < 1) throw InvalidArgument("run_chain: thin must be >= 1");
  const Index d = init.size();
  ChainOutput out;
  out.trace.resize(iterations, d);
  const int kept = (iterations - burn_in + thin - 1) / thin;
  out.samples.resize(kept, d);
  Vec x = init;
  std::uint64_t accepted = 0;
  int row = 0;
  for (int i = 0; i < iterations; ++i) {
    const std::string where = "iteration " + std::to_string(i) + ": ";
    try {
      auto [next, acc] = kernel(x, static_cast<std::uint64_t>(i));
      x = std::move(next);
      accepted += acc ? 1 : 0;
    } catch (const WeightDegeneracy& e) {
      throw WeightDegeneracy(where + e.what(), e.step());
    } catch (const NumericalFailure& e) {
      throw NumericalFailure(where + e.what());
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(where + e.what());
    } catch (const UnsupportedOperation& e) {
      throw UnsupportedOperation(where + e.what());
    }
    if (x.size() != d) throw InvalidArgument("run_chain: kernel changed the state dimension");
    out.trace.row(i) = x.transpose();
    if (i >= burn_in && (i - burn_in) % thin == 0) out.samples.row(row++) = x.transpose();
  }
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(iterations);
  return out;
}

Mat autocorrelation(const Mat& trace, int max_lag) {
  const Index n = trace.rows();
  if (max_lag < 0 || n <= max_lag) throw InvalidArgument("autocorrelation: trace length must exceed max_lag");
  const Index d = trace.cols();
  Mat acf(max_lag + 1, d);
  for (Index j = 0; j < d; ++j) {
    const Vec x = trace.col(j).array() - trace.col(j).mean();
    const double c0 = x.squaredNorm();
    for (int l = 0; l <= max_lag; ++l) {
      if (c0 <= 0.0) {
        acf(l, j) = 1.0;
        continue;
      }
      acf(l, j) = x.head(n - l).dot(x.tail(n - l)) / c0;
    }
  }
  return acf;
}

Vec worst_dimension_autocorrelation(const std::vector<Mat>& acfs) {
  if (acfs.empty()) throw InvalidArgument("worst_dimension_autocorrelation: no chains");
  Mat mean = Mat::Zero(acfs.front().rows(), acfs.front().cols());
  for (const auto& a : acfs) {
    if (a.rows() != mean.rows() || a.cols() != mean.cols())
      throw InvalidArgument("worst_dimension_autocorrelation: shape mismatch");
    mean += a;
  }
  mean /= static_cast<double>(acfs.size());
  return mean.rowwise().maxCoeff();
}

}  // namespace fbb
