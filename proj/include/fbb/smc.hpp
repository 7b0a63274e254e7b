#pragma once

#include <string>
#include <vector>

#include "fbb/reverse.hpp"
#include "fbb/rng.hpp"

namespace fbb {

enum class ResamplingScheme { Multinomial, Stratified, Killing };

const char* to_string(ResamplingScheme scheme);
ResamplingScheme resampling_from_string(const std::string& name);

// Normalized weights; log_mean receives log((1/N) sum exp(logw)).
// Throws WeightDegeneracy when no weight is positive and finite.
Vec normalize_log_weights(const Vec& logw, double& log_mean, int step = -1);

// Ancestor indices (0-based) for normalized weights.
std::vector<Index> resample(const Vec& weights, ResamplingScheme scheme, Rng& rng);
std::vector<Index> resample(const Vec& weights, ResamplingScheme scheme, const RngStreamKey& key);

struct ConditionalResample {
  std::vector<Index> ancestors;
  Index slot = 0;  // new slot of the reference, ancestors[slot] == reference_index
};

// Resampling conditional on the reference surviving. Multinomial places the
// reference at a uniform slot; killing uses the matching conditional slot law.
ConditionalResample conditional_resample(const Vec& weights, Index reference_index,
                                         ResamplingScheme scheme, Rng& rng);

// One time step of a filter. States are stored one particle per column.
struct ParticleEnsemble {
  Mat states;                     // du x N
  Vec log_weights;                // normalized log weights (zeros at the last step)
  std::vector<Index> ancestors;   // parent of each particle in the previous step
  double log_evidence_accum = 0.0;
};

struct FilterOptions {
  ResamplingScheme scheme = ResamplingScheme::Stratified;
  const Vec* fixed_u0 = nullptr;  // all particles start at this latent when set
  bool keep_history = false;
};

struct CsmcOptions {
  ResamplingScheme scheme = ResamplingScheme::Killing;
  // Particles start at the reference's u_0; otherwise from the reference law given v_0.
  bool fixed_u0 = true;
  bool keep_history = false;
};

struct FilterResult {
  Mat path;  // du x (K+1), selected trajectory
  double log_z = 0.0;
  std::vector<ParticleEnsemble> history;
};

// Unconditional filter targeting B(u_{0:K} | v_{0:K}); v holds one column per step.
FilterResult particle_filter(const ReverseModel& model, const Mat& v, int n_particles, Rng& rng,
                             const FilterOptions& options = {});
// Conditional filter with the reference trajectory kept alive; final index selection.
FilterResult csmc_kernel(const ReverseModel& model, const Mat& v, const Mat& reference, int n_particles,
                         Rng& rng, const CsmcOptions& options = {});
// Filter with the look-ahead twist of a TwistedModel; log_z estimates p(y | v).
FilterResult twisted_particle_filter(const TwistedModel& model, const Mat& v, int n_particles, Rng& rng,
                                     const FilterOptions& options = {});

// Two standard deviations across particles, one row per step and one column per dimension.
Mat coalescence_profile(const std::vector<ParticleEnsemble>& history);

}  // namespace fbb
