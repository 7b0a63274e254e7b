#pragma once

#include <functional>
#include <vector>

#include "fbb/kernel.hpp"
#include "fbb/models.hpp"
#include "fbb/sde.hpp"

namespace fbb {

using ScoreFunction = std::function<Vec(const Vec&, double)>;
using DriftFunction = std::function<Vec(const Vec&, double)>;

Vec exact_gaussian_score(const LinearSde& sde, const Gaussian& init, double t, const Vec& x);
ScoreFunction make_exact_score(const LinearSde& sde, const Gaussian& init);

// -f(u, T - t) + sigma^2 score(u, T - t), with t the reverse time.
Vec reverse_drift(const DriftFunction& f, const ScoreFunction& score, const Vec& u, double t,
                  double horizon, double sigma = 1.0);

// Reverse-time Gaussian model on z = (v, u). Kernel k maps reverse step k to
// k+1; reverse state k approximates forward time t_{K-k}.
struct ReverseModel {
  TimeGrid grid;
  Index dv = 0;
  Index du = 0;
  BlockKernel reference;  // law of (v_0, u_0)
  std::vector<BlockKernel> kernels;

  int steps() const noexcept { return static_cast<int>(kernels.size()); }
  void validate() const;
};

enum class ReverseScheme { Euler, Exact };
enum class ReferenceLaw { Marginal, StandardNormal };

struct ReverseOptions {
  ReverseScheme scheme = ReverseScheme::Euler;
  ReferenceLaw reference = ReferenceLaw::Marginal;
};

// Reverse kernels of the linear SDE started from `init` (exact Gaussian score).
ReverseModel discretize_reverse(const LinearSde& sde, const Gaussian& init, const TimeGrid& grid,
                                const ReverseOptions& options = {});
// Euler kernels for an arbitrary affine score (coefficients probed numerically).
ReverseModel discretize_reverse(const LinearSde& sde, const ScoreFunction& score,
                                const TimeGrid& grid, const Gaussian& reference);
// Reverse model from explicit backward kernels (e.g. a Schrodinger bridge).
ReverseModel reverse_from_kernels(Index dv, const TimeGrid& grid, const Gaussian& reference,
                                  const std::vector<DenseKernel>& backward);

// Forward transitions z_{k+1} | z_k on z = (y, x).
struct ForwardChain {
  TimeGrid grid;
  Index dy = 0;
  Index dx = 0;
  std::vector<BlockKernel> kernels;

  int steps() const noexcept { return static_cast<int>(kernels.size()); }
};

ForwardChain forward_chain(const LinearSde& sde, const TimeGrid& grid);
ForwardChain forward_chain(Index dy, const TimeGrid& grid, const std::vector<DenseKernel>& kernels);

// Column k holds z_k; z0 is column 0.
Mat simulate_chain(const ForwardChain& chain, const Vec& z0, Rng& rng);
double chain_log_density(const ForwardChain& chain, const Mat& path);
// Full backward density ref(z_0) prod_k kernel_k(z_{k+1} | z_k) of a reverse-ordered path.
double reverse_log_density(const ReverseModel& model, const Mat& rev_path);
// Exact log B(v_{1:K} | v_0) by Kalman recursions; u_0 fixed when given.
double reverse_log_evidence(const ReverseModel& model, const Mat& v, const Vec* u0 = nullptr);
// Unconditional ancestral draw of a reverse path (columns (v_k, u_k)).
Mat sample_reverse(const ReverseModel& model, Rng& rng);

Vec csgm_conditional_drift(const LinearSde& sde, const JointGaussianTarget& target, const Vec& y,
                           const Vec& u, double t);

// Per reverse step k = 0..K, twist p~_k(y | u_k) = N(y; H_k u_k + h_k, R_k).
struct GaussianTwist {
  std::vector<Mat> H;
  std::vector<Vec> h;
  std::vector<Mat> R;
};

// Tweedie twist N(y; E[X_0 | X_s = u], Xi) for an x-only linear SDE.
GaussianTwist gp_observation_twist(const LinearSde& sde, const Gaussian& prior, const Mat& xi,
                                   const TimeGrid& grid);

struct TwistedStep {
  LinearOp post_map;     // u -> posterior mean contribution
  LinearOp post_e;       // applied to the untwisted offset e
  Vec post_shift;        // K (y - h)
  CovOp post_cov;
  LinearOp pred_map;     // u -> H B u
  LinearOp pred_e;       // H applied to e
  Vec pred_shift;        // y - h
  CovOp pred_cov;
  LinearOp b_map;        // untwisted u -> B u (a_uu - L a_vu)
};

struct TwistedModel {
  ReverseModel base;
  Vec y;
  bool twisted = false;
  TwistedStep init;
  std::vector<TwistedStep> steps;  // proposal for u_{k+1}
  std::vector<LinearOp> twist_h;   // k = 0..K
  std::vector<Vec> twist_shift;    // y - h_k
  std::vector<CovOp> twist_cov;
};

// State-space model as a reverse model: v_{k+1} = y_k, u_k = x_k, with a dummy
// N(0, I) v_0. The path evidence then equals p(y_{0:K-1}).
ReverseModel reverse_model_from_ssm(const LinearSsm& ssm);
// Observation path (dv x (K+1)) with a zero v_0 column.
Mat ssm_observation_path(const std::vector<Vec>& obs);

// Twisted proposals and weights; a null twist gives the plain kernels.
TwistedModel twisted_kernels(const ReverseModel& reverse, const GaussianTwist* twist, const Vec& y);

}  // namespace fbb
