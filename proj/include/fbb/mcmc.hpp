#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "fbb/reverse.hpp"
#include "fbb/sde.hpp"
#include "fbb/smc.hpp"

namespace fbb {

// Conditional sampling problem: forward chain on z = (y, x), its (approximate)
// reversal on (v, u) = (y, x), and the observed y at time zero.
struct ConditionalProblem {
  ForwardChain forward;
  ReverseModel reverse;
  Vec y;
  const BridgePlan* bridge = nullptr;  // optional backward simulation of the forward path

  Index x_dim() const noexcept { return forward.dx; }
  Index y_dim() const noexcept { return forward.dy; }
  int steps() const noexcept { return forward.steps(); }
  void validate() const;
};

// Forward path (columns = grid points, forward time) to reverse ordering and back.
Mat reverse_columns(const Mat& path);

struct PcnCoefficients {
  double rho = 1.0;    // 2 / (2 + delta)
  double noise = 0.0;  // sqrt(1 - rho^2)
};

PcnCoefficients pcn_coefficients(double delta);
Mat pcn_propose(const Mat& eta, double delta, const Mat& fresh);
Mat pcn_propose(const Mat& eta, double delta, const RngStreamKey& key);

struct GibbsOptions {
  ResamplingScheme scheme = ResamplingScheme::Killing;
  bool mh_correction = false;
  // Start the conditional filter from the reference law instead of u_0 = x_T.
  bool trusted_reference_init = false;
  bool keep_history = false;
};

struct GibbsState {
  Vec x0;
  Mat path;  // forward-ordered (y, x) path behind x0; empty until the first sweep
  std::uint64_t iteration = 0;
  std::uint64_t mh_accepts = 0;
  std::uint64_t mh_trials = 0;
  std::vector<ParticleEnsemble> last_history;
};

// x0 from one unconditional filter pass on a forward path started at x0_guess.
GibbsState gibbs_init(const ConditionalProblem& problem, const Vec& x0_guess, int n_particles,
                      const RngStreamKey& key);
GibbsState gibbs_csmc_step(const GibbsState& state, const ConditionalProblem& problem, int n_particles,
                           const RngStreamKey& key, const GibbsOptions& options = {});

struct MhDecision {
  bool accept = false;
  double log_alpha = 0.0;
};

// log of q(*) p(j) / (q(j) p(*)), the measurement-path correction ratio.
double mh_path_log_ratio(double log_q_star, double log_p_star, double log_q_prev, double log_p_prev);
MhDecision mh_path_correction(double log_q_star, double log_p_star, double log_q_prev, double log_p_prev,
                              Rng& rng);
// Same with q the full backward path density and p the forward path density.
MhDecision mh_path_correction(const ConditionalProblem& problem, const Mat& proposed, const Mat& previous,
                              Rng& rng);

double pmmh_general_acceptance(double log_z_star, double log_z_prev, double log_q_prev_given_star,
                               double log_q_star_given_prev, double log_p_star, double log_p_prev);

struct PmcmcOptions {
  ResamplingScheme scheme = ResamplingScheme::Stratified;
  bool cache_noise = true;      // keep eta in memory; otherwise replay it from the lineage
  bool exact_evidence = false;  // test hook: Kalman evidence instead of the filter estimate
};

struct PmcmcState {
  Vec x0;
  RngStreamKey initial_key;
  std::vector<std::pair<RngStreamKey, double>> lineage;  // accepted (key, delta) pairs
  Mat eta;  // dy x K innovations, empty when not cached
  double log_z = 0.0;
  double log_target = 0.0;  // log_z + log ref_V(v_0) - log F(Y | y)
  std::uint64_t accept_count = 0;
  std::uint64_t step_count = 0;

  double acceptance_rate() const noexcept {
    return step_count == 0 ? 0.0 : static_cast<double>(accept_count) / static_cast<double>(step_count);
  }
};

// Replays eta from the initial key and the accepted proposals.
Mat replay_noise(const PmcmcState& state, Index rows, Index cols);
// Y path (dy x (K+1)) from innovations; needs y-block dynamics independent of x.
Mat materialize_observation_path(const ForwardChain& chain, const Vec& y0, const Mat& eta);

PmcmcState pmcmc_init(const ConditionalProblem& problem, int n_particles, const RngStreamKey& key,
                      const PmcmcOptions& options = {});
PmcmcState pmcmc_step(const PmcmcState& state, const ConditionalProblem& problem, int n_particles, double delta,
                      const RngStreamKey& key, const PmcmcOptions& options = {});

// Kernel: (current x, iteration index) -> (next x, accepted flag).
using ChainKernel = std::function<std::pair<Vec, bool>(const Vec&, std::uint64_t)>;

struct ChainOutput {
  Mat samples;  // retained draws, one row each
  Mat trace;    // every iteration, one row each
  double acceptance_rate = 0.0;
};

ChainOutput run_chain(const ChainKernel& kernel, const Vec& init, int iterations, int burn_in, int thin = 1);

// (max_lag + 1) x d autocorrelations; a constant dimension gives 1 at every lag.
Mat autocorrelation(const Mat& trace, int max_lag);
// Per-lag maximum over dimensions of the chain-averaged autocorrelation.
Vec worst_dimension_autocorrelation(const std::vector<Mat>& acfs);

}  // namespace fbb
