#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fbb/mcmc.hpp"
#include "fbb/metrics.hpp"
#include "fbb/models.hpp"
#include "fbb/reverse.hpp"

namespace fbb {

enum class Experiment { GpRegression, GaussianSb, SsmOracleSuite };
enum class Method { Pf, PfIdeal, PfApproximate, GibbsCsmc, Pmcmc, Tpf, Csgm };

const char* to_string(Experiment e);
const char* to_string(Method m);
Experiment experiment_from_string(const std::string& s);
Method method_from_string(const std::string& s);

struct ExperimentConfig {
  Experiment experiment = Experiment::GpRegression;
  Method method = Method::GibbsCsmc;
  int particles = 10;
  int samples = 2000;  // conditional samples, or retained chain iterations
  int repeats = 10;
  std::optional<double> delta;
  double horizon = 1.0;
  int steps = 0;  // 0 picks the experiment default
  int dim = 0;    // test points; 0 picks the experiment default
  double obs_noise = 0.0;  // 0 picks the experiment default
  std::uint64_t seed = 42;
  std::string out_dir;
  bool mh_correction = false;
  bool dump_ensembles = false;
  bool trusted_reference_init = false;
  bool fixed_y = false;
  bool exact_reverse = false;  // exact Gaussian reverse kernels instead of Euler
  int burn_in = -1;            // per chain; -1: 10% of the chain's retained draws
  int chains = 1;
  int max_lag = 50;
  int threads = 0;  // 0: hardware concurrency
  int oracle_runs = 20000;
  int oracle_chains = 1000;

  // Resolves experiment defaults and checks invariants; throws InvalidArgument.
  ExperimentConfig resolved() const;
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  // Desk defaults scaled to 10,000 samples and 100 repeats.
  ExperimentConfig paper_scale() const;
};

struct RepeatResult {
  int repeat = 0;
  MetricReport metrics;
  double seconds = 0.0;
  std::optional<double> acceptance;
  Vec worst_acf;      // worst-dimension autocorrelation per lag (chain methods)
  Mat coalescence;    // optional 2-std spread profile, steps x d, mean over the first 100 filter runs
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;
  double q05 = 0.0;
  double q50 = 0.0;
  double q95 = 0.0;
};

Summary summarize(const std::vector<double>& values);

struct RunReport {
  ExperimentConfig config;
  std::vector<RepeatResult> repeats;
  std::map<std::string, Summary> aggregate;
  double total_seconds = 0.0;

  std::vector<double> column(const std::string& name) const;
  nlohmann::json to_json() const;
};

// GP regression model in a basis that diagonalizes every block of the joint.
struct GpSetup {
  JointGaussianTarget target;   // original coordinates, x first
  Mat rotation;                 // original = rotation * rotated, for x and y alike
  JointGaussianTarget rotated;
  double noise = 1.0;
  LinearSde sde;                // on (y, x)
  LinearSde sde_x;
  TimeGrid grid;
  ConditionalProblem problem;   // y left empty
  ReverseModel reverse_x;       // prior reversal on x alone (twisted filter)
};

GpSetup build_gp_setup(const ExperimentConfig& config);
// One observation drawn from the y-marginal, original coordinates.
Vec draw_gp_observation(const GpSetup& setup, const RngStreamKey& key);
Gaussian gp_posterior(const GpSetup& setup, const Vec& y);

// Samples (rows, original coordinates) of method m for observation y.
struct MethodOutput {
  Mat samples;
  std::optional<double> acceptance;
  std::vector<Mat> traces;  // per chain, rows are iterations
  Mat coalescence;
};

MethodOutput run_gp_method(const GpSetup& setup, const ExperimentConfig& config, const Vec& y,
                           const RngStreamKey& key);

struct SbSetup {
  JointGaussianTarget target;
  Gaussian reference_end;
  TimeGrid grid;
  ConditionalProblem problem;  // y left empty
};

SbSetup build_sb_setup(const ExperimentConfig& config);
MethodOutput run_sb_method(const SbSetup& setup, const ExperimentConfig& config, const Vec& y,
                           const RngStreamKey& key);

RunReport run_gp_experiment(const ExperimentConfig& config);
RunReport run_gaussian_sb_experiment(const ExperimentConfig& config);

struct OracleCheck {
  std::string name;
  bool passed = false;
  double statistic = 0.0;
  double bound = 0.0;
  std::string detail;
};

struct OracleReport {
  std::vector<OracleCheck> checks;
  bool passed() const;
  nlohmann::json to_json() const;
};

// Mean of Z / Z_kalman over filter runs on a 2-d linear SSM (K = 10, N = 8).
OracleCheck check_evidence_unbiasedness(int runs, const RngStreamKey& key);
// Conditional filter chains started from exact smoother draws on a 1-d SSM.
OracleCheck check_csmc_invariance(int chains, int sweeps, ResamplingScheme scheme, const RngStreamKey& key,
                                  int steps = 20, int particles = 4);
// PCN chain on N(0, I_10).
OracleCheck check_pcn_stationarity(int iterations, double delta, const RngStreamKey& key);
OracleCheck check_pcn_identity();

OracleReport run_oracle_suite(const ExperimentConfig& config);
RunReport run_experiment(const ExperimentConfig& config);

// config.json, metrics.csv, summary.json and optional CSVs in dir.
void write_run_outputs(const RunReport& report, const std::string& dir);
void write_oracle_outputs(const OracleReport& report, const ExperimentConfig& config, const std::string& dir);

}  // namespace fbb
