#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "fbb/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kInvalidConfig = 2;
constexpr int kNumerical = 3;
constexpr int kOracleFailed = 4;

struct Flags {
  std::string config_path;
  std::optional<std::string> experiment, method, out;
  std::optional<int> particles, samples, repeats, steps, dim, chains, burn_in, threads, max_lag;
  std::optional<std::uint64_t> seed;
  std::optional<double> delta;
  bool mh_correction = false;
  bool dump_ensembles = false;
  bool trusted_init = false;
  bool fixed_y = false;
  bool exact_reverse = false;
  bool paper_scale = false;
};

fbb::ExperimentConfig load_config(const Flags& f) {
  fbb::ExperimentConfig c;
  if (!f.config_path.empty()) {
    std::ifstream is(f.config_path);
    if (!is) throw fbb::InvalidArgument("cannot read config file " + f.config_path);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw fbb::InvalidArgument(std::string("config is not valid JSON: ") + e.what());
    }
    c = fbb::ExperimentConfig::from_json(j);
  }
  if (f.experiment) c.experiment = fbb::experiment_from_string(*f.experiment);
  if (f.method) c.method = fbb::method_from_string(*f.method);
  if (f.out) c.out_dir = *f.out;
  if (f.particles) c.particles = *f.particles;
  if (f.samples) c.samples = *f.samples;
  if (f.repeats) c.repeats = *f.repeats;
  if (f.steps) c.steps = *f.steps;
  if (f.dim) c.dim = *f.dim;
  if (f.chains) c.chains = *f.chains;
  if (f.burn_in) c.burn_in = *f.burn_in;
  if (f.threads) c.threads = *f.threads;
  if (f.max_lag) c.max_lag = *f.max_lag;
  if (f.seed) c.seed = *f.seed;
  if (f.delta) c.delta = *f.delta;
  c.mh_correction = c.mh_correction || f.mh_correction;
  c.dump_ensembles = c.dump_ensembles || f.dump_ensembles;
  c.trusted_reference_init = c.trusted_reference_init || f.trusted_init;
  c.fixed_y = c.fixed_y || f.fixed_y;
  c.exact_reverse = c.exact_reverse || f.exact_reverse;
  if (f.paper_scale) {
    std::cerr << "warning: --paper-scale runs 10000 samples x 100 repeats and can take many hours\n";
    c = c.paper_scale();
  }
  return c;
}

void add_run_flags(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config_path, "JSON config; flags override its values");
  app->add_option("--experiment", f.experiment, "gp-regression | gaussian-sb");
  app->add_option("--method", f.method, "pf | pf-ideal | pf-approximate | gibbs-csmc | pmcmc | tpf | csgm");
  app->add_option("--particles", f.particles);
  app->add_option("--samples", f.samples);
  app->add_option("--repeats", f.repeats);
  app->add_option("--steps", f.steps, "time steps K");
  app->add_option("--dim", f.dim, "number of test points");
  app->add_option("--chains", f.chains);
  app->add_option("--burn-in", f.burn_in);
  app->add_option("--threads", f.threads);
  app->add_option("--max-lag", f.max_lag);
  app->add_option("--seed", f.seed);
  app->add_option("--out", f.out, "output directory");
  app->add_option("--delta", f.delta, "PCN step for pmcmc");
  app->add_flag("--mh-correction", f.mh_correction);
  app->add_flag("--dump-ensembles", f.dump_ensembles);
  app->add_flag("--trusted-reference-init", f.trusted_init);
  app->add_flag("--fixed-y", f.fixed_y);
  app->add_flag("--exact-reverse", f.exact_reverse);
  app->add_flag("--paper-scale", f.paper_scale);
}

void print_summary(const fbb::RunReport& r) {
  fmt::print("{} / {}: {} repeats in {:.1f}s\n", fbb::to_string(r.config.experiment), fbb::to_string(r.config.method),
             r.repeats.size(), r.total_seconds);
  for (const auto& [name, s] : r.aggregate)
    fmt::print("  {:<15} mean {:.5g}  std {:.3g}  median {:.5g}\n", name, s.mean, s.std, s.q50);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forward-backward bridging samplers"};
  app.require_subcommand(1);
  Flags run_flags, oracle_flags;
  std::optional<int> oracle_runs, oracle_chains;
  CLI::App* run = app.add_subcommand("run", "run an experiment");
  add_run_flags(run, run_flags);
  CLI::App* oracle = app.add_subcommand("oracle-suite", "linear-Gaussian oracle checks");
  oracle->add_option("--config", oracle_flags.config_path);
  oracle->add_option("--seed", oracle_flags.seed);
  oracle->add_option("--out", oracle_flags.out);
  oracle->add_option("--runs", oracle_runs, "filter runs for the evidence check");
  oracle->add_option("--chains", oracle_chains, "chains for the invariance check");
  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      fbb::ExperimentConfig c = load_config(run_flags);
      if (c.experiment == fbb::Experiment::SsmOracleSuite)
        throw fbb::InvalidArgument("use the oracle-suite subcommand");
      const fbb::RunReport report = fbb::run_experiment(c);
      print_summary(report);
      if (!c.out_dir.empty()) fbb::write_run_outputs(report, c.out_dir);
      return kOk;
    }
    fbb::ExperimentConfig c = load_config(oracle_flags);
    c.experiment = fbb::Experiment::SsmOracleSuite;
    if (oracle_runs) c.oracle_runs = *oracle_runs;
    if (oracle_chains) c.oracle_chains = *oracle_chains;
    const fbb::OracleReport report = fbb::run_oracle_suite(c);
    for (const auto& chk : report.checks)
      fmt::print("{} {}: {}\n", chk.passed ? "PASS" : "FAIL", chk.name, chk.detail);
    if (!c.out_dir.empty()) fbb::write_oracle_outputs(report, c, c.out_dir);
    return report.passed() ? kOk : kOracleFailed;
  } catch (const fbb::InvalidArgument& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kInvalidConfig;
  } catch (const fbb::UnsupportedOperation& e) {
    std::cerr << "unsupported: " << e.what() << "\n";
    return kInvalidConfig;
  } catch (const fbb::Error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  }
}
