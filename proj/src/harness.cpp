#include "fbb/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <fmt/format.h>

namespace fbb {

using nlohmann::json;

const char* to_string(Experiment e) {
  switch (e) {
    case Experiment::GpRegression: return "gp-regression";
    case Experiment::GaussianSb: return "gaussian-sb";
    case Experiment::SsmOracleSuite: return "ssm-oracle-suite";
  }
  return "unknown";
}

const char* to_string(Method m) {
  switch (m) {
    case Method::Pf: return "pf";
    case Method::PfIdeal: return "pf-ideal";
    case Method::PfApproximate: return "pf-approximate";
    case Method::GibbsCsmc: return "gibbs-csmc";
    case Method::Pmcmc: return "pmcmc";
    case Method::Tpf: return "tpf";
    case Method::Csgm: return "csgm";
  }
  return "unknown";
}

Experiment experiment_from_string(const std::string& s) {
  for (Experiment e : {Experiment::GpRegression, Experiment::GaussianSb, Experiment::SsmOracleSuite})
    if (s == to_string(e)) return e;
  throw InvalidArgument("unknown experiment: " + s);
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::Pf, Method::PfIdeal, Method::PfApproximate, Method::GibbsCsmc, Method::Pmcmc, Method::Tpf,
                   Method::Csgm})
    if (s == to_string(m)) return m;
  throw InvalidArgument("unknown method: " + s);
}

namespace {

bool is_chain(Method m) { return m == Method::GibbsCsmc || m == Method::Pmcmc; }

}  // namespace

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig c = *this;
  if (c.experiment == Experiment::GpRegression) {
    if (c.dim == 0) c.dim = 100;
    if (c.steps == 0) c.steps = 200;
    if (c.obs_noise == 0.0) c.obs_noise = 1.0;
  } else if (c.experiment == Experiment::GaussianSb) {
    if (c.dim == 0) c.dim = 20;
    if (c.steps == 0) c.steps = 100;
    if (c.obs_noise == 0.0) c.obs_noise = 0.1;
  }
  if (c.burn_in < 0) c.burn_in = c.samples / std::max(c.chains, 1) / 10;
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (repeats < 1) throw InvalidArgument("repeats must be >= 1");
  if (samples < 2) throw InvalidArgument("samples must be >= 2");
  if (experiment == Experiment::SsmOracleSuite) {
    if (oracle_runs < 2 || oracle_chains < 2) throw InvalidArgument("oracle suite sizes must be >= 2");
    return;
  }
  if (method != Method::Csgm && particles < 2) throw InvalidArgument("particle methods need particles >= 2");
  if (method == Method::Pmcmc && !delta) throw InvalidArgument("pmcmc needs --delta");
  if (method != Method::Pmcmc && delta) throw InvalidArgument("--delta only applies to pmcmc");
  if (delta && !(*delta > 0.0)) throw InvalidArgument("delta must be positive");
  if (!(horizon > 0.0)) throw InvalidArgument("horizon must be positive");
  if (steps < 1 || dim < 1 || !(obs_noise > 0.0)) throw InvalidArgument("steps, dim and noise must be positive");
  if (chains < 1) throw InvalidArgument("chains must be >= 1");
  if (is_chain(method) && samples < chains) throw InvalidArgument("samples must be >= chains");
  if (burn_in < 0) throw InvalidArgument("burn_in must be >= 0");
  if (max_lag < 0) throw InvalidArgument("max_lag must be >= 0");
  if (threads < 0) throw InvalidArgument("threads must be >= 0");
  if (mh_correction && method != Method::GibbsCsmc) throw InvalidArgument("--mh-correction applies to gibbs-csmc");
  if (experiment == Experiment::GpRegression) {
    if (method == Method::PfIdeal || method == Method::PfApproximate)
      throw InvalidArgument("pf-ideal and pf-approximate belong to the gaussian-sb experiment");
  } else {
    if (method == Method::Pmcmc)
      throw UnsupportedOperation("pmcmc needs separable forward dynamics; the Schrodinger bridge is not separable");
    if (method != Method::PfIdeal && method != Method::PfApproximate && method != Method::GibbsCsmc)
      throw InvalidArgument("gaussian-sb supports pf-ideal, pf-approximate and gibbs-csmc");
  }
}

json ExperimentConfig::to_json() const {
  json j;
  j["experiment"] = to_string(experiment);
  j["method"] = to_string(method);
  j["particles"] = particles;
  j["samples"] = samples;
  j["repeats"] = repeats;
  j["delta"] = delta ? json(*delta) : json(nullptr);
  j["horizon"] = horizon;
  j["steps"] = steps;
  j["dim"] = dim;
  j["obs_noise"] = obs_noise;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["mh_correction"] = mh_correction;
  j["dump_ensembles"] = dump_ensembles;
  j["trusted_reference_init"] = trusted_reference_init;
  j["fixed_y"] = fixed_y;
  j["exact_reverse"] = exact_reverse;
  j["burn_in"] = burn_in;
  j["chains"] = chains;
  j["max_lag"] = max_lag;
  j["threads"] = threads;
  j["oracle_runs"] = oracle_runs;
  j["oracle_chains"] = oracle_chains;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  ExperimentConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "experiment") c.experiment = experiment_from_string(value.get<std::string>());
      else if (key == "method") c.method = method_from_string(value.get<std::string>());
      else if (key == "particles") c.particles = value.get<int>();
      else if (key == "samples") c.samples = value.get<int>();
      else if (key == "repeats") c.repeats = value.get<int>();
      else if (key == "delta") c.delta = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
      else if (key == "horizon") c.horizon = value.get<double>();
      else if (key == "steps") c.steps = value.get<int>();
      else if (key == "dim") c.dim = value.get<int>();
      else if (key == "obs_noise") c.obs_noise = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "out_dir") c.out_dir = value.get<std::string>();
      else if (key == "mh_correction") c.mh_correction = value.get<bool>();
      else if (key == "dump_ensembles") c.dump_ensembles = value.get<bool>();
      else if (key == "trusted_reference_init") c.trusted_reference_init = value.get<bool>();
      else if (key == "fixed_y") c.fixed_y = value.get<bool>();
      else if (key == "exact_reverse") c.exact_reverse = value.get<bool>();
      else if (key == "burn_in") c.burn_in = value.get<int>();
      else if (key == "chains") c.chains = value.get<int>();
      else if (key == "max_lag") c.max_lag = value.get<int>();
      else if (key == "threads") c.threads = value.get<int>();
      else if (key == "oracle_runs") c.oracle_runs = value.get<int>();
      else if (key == "oracle_chains") c.oracle_chains = value.get<int>();
      else throw InvalidArgument("unknown config key: " + key);
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad config value: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::paper_scale() const {
  ExperimentConfig c = *this;
  c.samples = 10000;
  c.repeats = 100;
  return c;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  auto q = [&](double p) {
    const double pos = p * (n - 1.0);
    const auto lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  s.q05 = q(0.05);
  s.q50 = q(0.5);
  s.q95 = q(0.95);
  return s;
}

std::vector<double> RunReport::column(const std::string& name) const {
  std::vector<double> out;
  for (const auto& r : repeats) {
    const MetricReport& m = r.metrics;
    if (name == "kl") out.push_back(m.kl);
    else if (name == "kl_reverse") out.push_back(m.kl_reverse);
    else if (name == "bures") out.push_back(m.bures);
    else if (name == "bures_distance") out.push_back(m.bures_distance);
    else if (name == "mean_mae") out.push_back(m.mean_mae);
    else if (name == "var_mae") out.push_back(m.var_mae);
    else if (name == "seconds") out.push_back(r.seconds);
    else if (name == "acceptance") {
      if (r.acceptance) out.push_back(*r.acceptance);
    } else {
      throw InvalidArgument("unknown report column: " + name);
    }
  }
  return out;
}

namespace {

json summary_json(const Summary& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"q05", s.q05}, {"q50", s.q50}, {"q95", s.q95}};
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"kl", "kl_reverse", "bures", "bures_distance", "mean_mae", "var_mae"};
  return names;
}

}  // namespace

json RunReport::to_json() const {
  json j;
  j["config"] = config.to_json();
  json agg = json::object();
  for (const auto& [k, v] : aggregate) agg[k] = summary_json(v);
  j["aggregate"] = agg;
  j["total_seconds"] = total_seconds;
  json reps = json::array();
  for (const auto& r : repeats) {
    json e;
    e["repeat"] = r.repeat;
    e["kl"] = r.metrics.kl;
    e["kl_reverse"] = r.metrics.kl_reverse;
    e["bures"] = r.metrics.bures;
    e["bures_distance"] = r.metrics.bures_distance;
    e["mean_mae"] = r.metrics.mean_mae;
    e["var_mae"] = r.metrics.var_mae;
    e["n_samples"] = r.metrics.n_samples;
    e["seconds"] = r.seconds;
    e["acceptance"] = r.acceptance ? json(*r.acceptance) : json(nullptr);
    reps.push_back(e);
  }
  j["repeats"] = reps;
  return j;
}

namespace {

// Runs fn(i) for i in [0, n) on a small worker pool; the first exception wins.
template <class Fn>
void parallel_for(int n, int threads, Fn fn) {
  int workers = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ReverseOptions reverse_options(const ExperimentConfig& c) {
  ReverseOptions o;
  o.scheme = c.exact_reverse ? ReverseScheme::Exact : ReverseScheme::Euler;
  return o;
}

Gaussian block_diagonal_part(const Gaussian& g, Index split) {
  // Keeps only the diagonals of the four blocks; exact for the rotated GP joint.
  Gaussian out(g.mean, Mat::Zero(g.dim(), g.dim()));
  const Index n = g.dim();
  for (Index i = 0; i < n; ++i) {
    out.cov(i, i) = g.cov(i, i);
    const Index j = i < split ? i + split : i - split;
    if (j >= 0 && j < n) out.cov(i, j) = g.cov(i, j);
  }
  return out;
}

Mat rotate_rows(const Mat& rows, const Mat& rotation) { return rows * rotation.transpose(); }

std::vector<ParticleEnsemble> rotate_history(const std::vector<ParticleEnsemble>& h, const Mat& rotation) {
  std::vector<ParticleEnsemble> out = h;
  for (auto& e : out) e.states = rotation * e.states;
  return out;
}

// Spread profiles are averaged over this many filter runs per repeat.
constexpr int kCoalescenceRuns = 100;

void accumulate_profile(Mat& acc, const Mat& profile) {
  if (acc.size() == 0) acc = profile;
  else acc += profile;
}

struct ChainRun {
  Mat samples;
  std::vector<Mat> traces;
  std::optional<double> acceptance;
};

// Gibbs or pseudo-marginal chains on `problem`; samples and traces are mapped
// through `rotation` back to original coordinates.
ChainRun run_chains(const ConditionalProblem& problem, const ExperimentConfig& c, const Mat& rotation,
                    const RngStreamKey& key) {
  ChainRun out;
  const Index dx = problem.x_dim();
  out.samples.resize(c.samples, dx);
  Index row = 0;
  std::uint64_t acc = 0, trials = 0;
  for (int ch = 0; ch < c.chains; ++ch) {
    const int kept = c.samples / c.chains + (ch < c.samples % c.chains ? 1 : 0);
    const int iterations = c.burn_in + kept;
    const auto chu = static_cast<std::uint64_t>(ch);
    ChainOutput co;
    if (c.method == Method::GibbsCsmc) {
      GibbsState st = gibbs_init(problem, Vec::Zero(dx), c.particles, key.child({2, chu}));
      GibbsOptions go;
      go.mh_correction = c.mh_correction;
      go.trusted_reference_init = c.trusted_reference_init;
      const RngStreamKey ck = key.child({3, chu});
      ChainKernel kernel = [&](const Vec&, std::uint64_t i) {
        const std::uint64_t before = st.mh_accepts;
        st = gibbs_csmc_step(st, problem, c.particles, ck.child(i), go);
        return std::make_pair(st.x0, st.mh_accepts > before);
      };
      co = run_chain(kernel, st.x0, iterations, c.burn_in);
      acc += st.mh_accepts;
      trials += st.mh_trials;
    } else {
      PmcmcState st = pmcmc_init(problem, c.particles, key.child({2, chu}));
      const RngStreamKey ck = key.child({3, chu});
      ChainKernel kernel = [&](const Vec&, std::uint64_t i) {
        const std::uint64_t before = st.accept_count;
        st = pmcmc_step(st, problem, c.particles, *c.delta, ck.child(i));
        return std::make_pair(st.x0, st.accept_count > before);
      };
      co = run_chain(kernel, st.x0, iterations, c.burn_in);
      acc += st.accept_count;
      trials += st.step_count;
    }
    out.samples.middleRows(row, kept) = rotate_rows(co.samples, rotation);
    row += kept;
    out.traces.push_back(rotate_rows(co.trace, rotation));
  }
  if (trials > 0) out.acceptance = static_cast<double>(acc) / static_cast<double>(trials);
  return out;
}

}  // namespace

GpSetup build_gp_setup(const ExperimentConfig& config) {
  const ExperimentConfig c = config.resolved();
  GpSetup s;
  GpRegressionSpec spec = GpRegressionSpec::uniform(c.dim, 0.0, 5.0, c.obs_noise);
  s.target = build_gp_joint(spec);
  s.noise = c.obs_noise;
  const Index d = c.dim;
  Eigen::SelfAdjointEigenSolver<Mat> es(s.target.x_marginal().cov);
  if (es.info() != Eigen::Success) throw NumericalFailure("GP prior eigendecomposition failed");
  s.rotation = es.eigenvectors();
  Mat r2 = Mat::Zero(2 * d, 2 * d);
  r2.topLeftCorner(d, d) = s.rotation;
  r2.bottomRightCorner(d, d) = s.rotation;
  const Gaussian rot(r2.transpose() * s.target.joint.mean, symmetrize(r2.transpose() * s.target.joint.cov * r2));
  s.rotated = {block_diagonal_part(rot, d), d, d};
  s.grid = make_uniform_grid(c.horizon, c.steps);
  s.sde = LinearSde::constant(2 * d, -0.5, 1.0, c.horizon, d);
  s.sde_x = LinearSde::constant(d, -0.5, 1.0, c.horizon, 0);
  s.problem.forward = forward_chain(s.sde, s.grid);
  s.problem.reverse = discretize_reverse(s.sde, s.rotated.yx_joint(), s.grid, reverse_options(c));
  s.reverse_x = discretize_reverse(s.sde_x, s.rotated.x_marginal(), s.grid, reverse_options(c));
  return s;
}

Vec draw_gp_observation(const GpSetup& setup, const RngStreamKey& key) {
  Rng rng(key);
  const Gaussian ym = setup.target.y_marginal();
  return sample(ym, rng.normals(ym.dim()));
}

Gaussian gp_posterior(const GpSetup& setup, const Vec& y) { return exact_posterior(setup.target, y); }

MethodOutput run_gp_method(const GpSetup& setup, const ExperimentConfig& config, const Vec& y,
                           const RngStreamKey& key) {
  const ExperimentConfig c = config.resolved();
  if (c.experiment != Experiment::GpRegression) throw InvalidArgument("run_gp_method: not a GP config");
  const Index d = setup.target.x_dim;
  const int K = setup.grid.steps();
  const Vec yr = setup.rotation.transpose() * y;
  MethodOutput out;
  if (is_chain(c.method)) {
    ConditionalProblem p = setup.problem;
    p.y = yr;
    ChainRun run = run_chains(p, c, setup.rotation, key);
    out.samples = std::move(run.samples);
    out.traces = std::move(run.traces);
    out.acceptance = run.acceptance;
    return out;
  }
  out.samples.resize(c.samples, d);
  if (c.method == Method::Csgm) {
    const Gaussian post = exact_posterior(setup.rotated, yr);
    const ReverseModel m = discretize_reverse(setup.sde_x, post, setup.grid, reverse_options(c));
    for (int i = 0; i < c.samples; ++i) {
      Rng rng(key.child({1, static_cast<std::uint64_t>(i)}));
      out.samples.row(i) = (setup.rotation * sample_reverse(m, rng).col(K)).transpose();
    }
    return out;
  }
  std::optional<TwistedModel> tm;
  if (c.method == Method::Tpf) {
    const GaussianTwist tw = gp_observation_twist(setup.sde_x, setup.rotated.x_marginal(),
                                                  setup.noise * Mat::Identity(d, d), setup.grid);
    tm = twisted_kernels(setup.reverse_x, &tw, yr);
  }
  const Mat empty_v(0, K + 1);
  for (int i = 0; i < c.samples; ++i) {
    Rng rng(key.child({1, static_cast<std::uint64_t>(i)}));
    FilterOptions fo;
    fo.keep_history = c.dump_ensembles && i < kCoalescenceRuns;
    FilterResult res;
    if (tm) {
      res = twisted_particle_filter(*tm, empty_v, c.particles, rng, fo);
    } else {
      const Mat ypath = materialize_observation_path(setup.problem.forward, yr, rng.normals(d, K));
      res = particle_filter(setup.problem.reverse, reverse_columns(ypath), c.particles, rng, fo);
    }
    out.samples.row(i) = (setup.rotation * res.path.col(K)).transpose();
    if (fo.keep_history) accumulate_profile(out.coalescence, coalescence_profile(rotate_history(res.history, setup.rotation)));
  }
  if (out.coalescence.size() > 0) out.coalescence /= std::min(c.samples, kCoalescenceRuns);
  return out;
}

SbSetup build_sb_setup(const ExperimentConfig& config) {
  const ExperimentConfig c = config.resolved();
  SbSetup s;
  const Index d = c.dim;
  s.target = build_gp_joint(GpRegressionSpec::uniform(d, 0.0, 5.0, c.obs_noise));
  const Mat q = wishart_reference(2 * d, RngStreamKey(c.seed, {0x5b}));
  s.reference_end = Gaussian(Vec::Zero(2 * d), q);
  s.grid = make_uniform_grid(c.horizon, c.steps);
  GaussianSbSpec spec{s.target.yx_joint(), s.reference_end, 1.0, c.horizon};
  const SbKernels k = gaussian_sb(spec, s.grid.points());
  s.problem.forward = forward_chain(d, s.grid, k.forward);
  s.problem.reverse = reverse_from_kernels(d, s.grid, s.reference_end, k.backward);
  return s;
}

MethodOutput run_sb_method(const SbSetup& setup, const ExperimentConfig& config, const Vec& y,
                           const RngStreamKey& key) {
  const ExperimentConfig c = config.resolved();
  if (c.experiment != Experiment::GaussianSb) throw InvalidArgument("run_sb_method: not a gaussian-sb config");
  const Index d = setup.target.x_dim;
  const int K = setup.grid.steps();
  ConditionalProblem p = setup.problem;
  p.y = y;
  MethodOutput out;
  if (c.method == Method::GibbsCsmc) {
    ChainRun run = run_chains(p, c, Mat::Identity(d, d), key);
    out.samples = std::move(run.samples);
    out.traces = std::move(run.traces);
    out.acceptance = run.acceptance;
    return out;
  }
  const Gaussian post = exact_posterior(setup.target, y);
  out.samples.resize(c.samples, d);
  for (int i = 0; i < c.samples; ++i) {
    Rng rng(key.child({1, static_cast<std::uint64_t>(i)}));
    const Vec x0 = c.method == Method::PfIdeal ? sample(post, rng.normals(d)) : rng.normals(d);
    Vec z0(2 * d);
    z0 << y, x0;
    const Mat fwd = simulate_chain(p.forward, z0, rng);
    FilterOptions fo;
    fo.keep_history = c.dump_ensembles && i < kCoalescenceRuns;
    const FilterResult res = particle_filter(p.reverse, reverse_columns(fwd).topRows(d), c.particles, rng, fo);
    out.samples.row(i) = res.path.col(K).transpose();
    if (fo.keep_history) accumulate_profile(out.coalescence, coalescence_profile(res.history));
  }
  if (out.coalescence.size() > 0) out.coalescence /= std::min(c.samples, kCoalescenceRuns);
  return out;
}

namespace {

template <class Setup, class Draw, class Posterior, class Method>
RunReport run_repeats(const ExperimentConfig& c, const Setup& setup, Draw draw_y, Posterior posterior,
                      Method method) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  report.config = c;
  report.repeats.resize(static_cast<size_t>(c.repeats));
  parallel_for(c.repeats, c.threads, [&](int r) {
    const auto tr = std::chrono::steady_clock::now();
    const RngStreamKey key(c.seed, {static_cast<std::uint64_t>(r)});
    const Vec y = draw_y(c.fixed_y ? RngStreamKey(c.seed, {0xf1ed}) : key.child(0));
    const Gaussian truth = posterior(y);
    MethodOutput out = method(y, key.child(1));
    RepeatResult& res = report.repeats[static_cast<size_t>(r)];
    res.repeat = r;
    res.metrics = evaluate_samples(out.samples, truth);
    res.acceptance = out.acceptance;
    res.coalescence = std::move(out.coalescence);
    if (!out.traces.empty()) {
      std::vector<Mat> acfs;
      for (const auto& t : out.traces)
        if (t.rows() > c.max_lag) acfs.push_back(autocorrelation(t, c.max_lag));
      if (!acfs.empty()) res.worst_acf = worst_dimension_autocorrelation(acfs);
    }
    res.seconds = seconds_since(tr);
  });
  for (const auto& name : metric_names()) report.aggregate[name] = summarize(report.column(name));
  const auto acc = report.column("acceptance");
  if (!acc.empty()) report.aggregate["acceptance"] = summarize(acc);
  report.aggregate["seconds"] = summarize(report.column("seconds"));
  report.total_seconds = seconds_since(t0);
  (void)setup;
  return report;
}

}  // namespace

RunReport run_gp_experiment(const ExperimentConfig& config) {
  const ExperimentConfig c = config.resolved();
  if (c.experiment != Experiment::GpRegression) throw InvalidArgument("run_gp_experiment: experiment mismatch");
  const GpSetup setup = build_gp_setup(c);
  return run_repeats(
      c, setup, [&](const RngStreamKey& k) { return draw_gp_observation(setup, k); },
      [&](const Vec& y) { return gp_posterior(setup, y); },
      [&](const Vec& y, const RngStreamKey& k) { return run_gp_method(setup, c, y, k); });
}

RunReport run_gaussian_sb_experiment(const ExperimentConfig& config) {
  const ExperimentConfig c = config.resolved();
  if (c.experiment != Experiment::GaussianSb) throw InvalidArgument("run_gaussian_sb_experiment: experiment mismatch");
  const SbSetup setup = build_sb_setup(c);
  return run_repeats(
      c, setup,
      [&](const RngStreamKey& k) {
        Rng rng(k);
        const Gaussian ym = setup.target.y_marginal();
        return sample(ym, rng.normals(ym.dim()));
      },
      [&](const Vec& y) { return exact_posterior(setup.target, y); },
      [&](const Vec& y, const RngStreamKey& k) { return run_sb_method(setup, c, y, k); });
}

bool OracleReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const OracleCheck& c) { return c.passed; });
}

json OracleReport::to_json() const {
  json j;
  j["passed"] = passed();
  json arr = json::array();
  for (const auto& c : checks)
    arr.push_back({{"name", c.name}, {"passed", c.passed}, {"statistic", c.statistic}, {"bound", c.bound},
                   {"detail", c.detail}});
  j["checks"] = arr;
  return j;
}

OracleCheck check_evidence_unbiasedness(int runs, const RngStreamKey& key) {
  if (runs < 2) throw InvalidArgument("check_evidence_unbiasedness: runs must be >= 2");
  const int K = 10;
  Mat a(2, 2);
  a << 0.9, 0.2, -0.1, 0.8;
  const LinearSsm ssm = LinearSsm::time_invariant(Gaussian(Vec::Zero(2), Mat::Identity(2, 2)), a,
                                                  0.3 * Mat::Identity(2, 2), Mat::Identity(2, 2),
                                                  0.5 * Mat::Identity(2, 2), K);
  Rng sim(key.child(0));
  const auto [states, obs] = simulate_ssm(ssm, sim);
  (void)states;
  const double log_true = kalman_evidence_and_smoother(ssm, obs).log_evidence;
  const ReverseModel rm = reverse_model_from_ssm(ssm);
  const Mat v = ssm_observation_path(obs);
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < runs; ++i) {
    Rng rng(key.child({1, static_cast<std::uint64_t>(i)}));
    const double r = std::exp(particle_filter(rm, v, 8, rng).log_z - log_true);
    sum += r;
    sum2 += r * r;
  }
  const double n = static_cast<double>(runs);
  const double mean = sum / n;
  const double se = std::sqrt(std::max(sum2 / n - mean * mean, 0.0) / (n - 1.0));
  OracleCheck c;
  c.name = "evidence-unbiasedness";
  c.statistic = se > 0.0 ? std::abs(mean - 1.0) / se : 0.0;
  c.bound = 3.0;
  c.passed = c.statistic <= c.bound;
  c.detail = fmt::format("mean Z/Z_kalman = {:.5f}, standard error {:.5f}, runs {}", mean, se, runs);
  return c;
}

OracleCheck check_csmc_invariance(int chains, int sweeps, ResamplingScheme scheme, const RngStreamKey& key,
                                  int steps, int particles) {
  if (chains < 2 || sweeps < 1) throw InvalidArgument("check_csmc_invariance: bad sizes");
  const LinearSsm ssm = LinearSsm::time_invariant(Gaussian(Vec::Zero(1), Mat::Identity(1, 1)),
                                                  Mat::Constant(1, 1, 0.9), Mat::Constant(1, 1, 0.5),
                                                  Mat::Identity(1, 1), Mat::Identity(1, 1), steps);
  Rng sim(key.child(0));
  const auto [states, obs] = simulate_ssm(ssm, sim);
  (void)states;
  const KalmanResult kr = kalman_evidence_and_smoother(ssm, obs);
  const ReverseModel rm = reverse_model_from_ssm(ssm);
  const Mat v = ssm_observation_path(obs);
  CsmcOptions opts;
  opts.scheme = scheme;
  opts.fixed_u0 = false;
  Mat finals(chains, steps + 1);
  for (int ch = 0; ch < chains; ++ch) {
    Rng rng(key.child({1, static_cast<std::uint64_t>(ch)}));
    Mat ref = ffbs_sample(ssm, obs, kr, rng).transpose();
    for (int s = 0; s < sweeps; ++s) ref = csmc_kernel(rm, v, ref, particles, rng, opts).path;
    finals.row(ch) = ref.row(0);
  }
  const double n = static_cast<double>(chains);
  double worst = 0.0;
  int worst_step = 0;
  for (int k = 0; k <= steps; ++k) {
    const double m = kr.smoothed[static_cast<size_t>(k)].mean(0);
    const double p = kr.smoothed[static_cast<size_t>(k)].cov(0, 0);
    const Vec col = finals.col(k);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / (n - 1.0);
    const double zm = std::abs(mean - m) / std::sqrt(p / n);
    const double zv = std::abs(var - p) / (p * std::sqrt(2.0 / (n - 1.0)));
    if (std::max(zm, zv) > worst) {
      worst = std::max(zm, zv);
      worst_step = k;
    }
  }
  OracleCheck c;
  c.name = std::string("csmc-invariance-") + to_string(scheme);
  c.statistic = worst;
  c.bound = 3.0;
  c.passed = worst <= c.bound;
  c.detail = fmt::format("max |z| over {} steps (mean and variance) = {:.3f} at step {}; {} chains x {} sweeps",
                         steps + 1, worst, worst_step, chains, sweeps);
  return c;
}

OracleCheck check_pcn_stationarity(int iterations, double delta, const RngStreamKey& key) {
  if (iterations < 2) throw InvalidArgument("check_pcn_stationarity: iterations must be >= 2");
  const Index d = 10;
  Rng rng(key);
  Mat eta = rng.normals(d, 1);
  Vec sum = Vec::Zero(d), sum2 = Vec::Zero(d);
  for (int i = 0; i < iterations; ++i) {
    eta = pcn_propose(eta, delta, rng.normals(d, 1));
    sum += eta.col(0);
    sum2 += eta.col(0).cwiseAbs2();
  }
  const double n = static_cast<double>(iterations);
  const Vec mean = sum / n;
  const Vec var = (sum2 / n - mean.cwiseAbs2()) * (n / (n - 1.0));
  const double mean_err = mean.cwiseAbs().maxCoeff();
  const double var_err = (var.array() - 1.0).abs().maxCoeff();
  const Mat e0 = Mat::Constant(d, 1, 0.7);
  const Mat tiny = pcn_propose(e0, 1e-12, rng.normals(d, 1));
  const double limit_err = (tiny - e0).cwiseAbs().maxCoeff() / 0.7;
  OracleCheck c;
  c.name = "pcn-stationarity";
  c.statistic = std::max(mean_err / 0.02, var_err / 0.03);
  c.bound = 1.0;
  c.passed = mean_err <= 0.02 && var_err <= 0.03 && limit_err <= 1e-5;
  c.detail = fmt::format("delta {}: max |mean| {:.4f} (<= 0.02), max |var - 1| {:.4f} (<= 0.03), "
                         "delta=1e-12 relative change {:.2e} (<= 1e-5)",
                         delta, mean_err, var_err, limit_err);
  return c;
}

OracleCheck check_pcn_identity() {
  double worst = 0.0;
  for (double delta : {1e-3, 0.1, 1.0, 10.0}) {
    const double r = 2.0 / (2.0 + delta);
    worst = std::max(worst, std::abs(r * r + (1.0 - 4.0 / (4.0 + 4.0 * delta + delta * delta)) - 1.0));
    const PcnCoefficients pc = pcn_coefficients(delta);
    worst = std::max(worst, std::abs(pc.rho * pc.rho + pc.noise * pc.noise - 1.0));
  }
  OracleCheck c;
  c.name = "pcn-identity";
  c.statistic = worst;
  c.bound = 1e-14;
  c.passed = worst <= c.bound;
  c.detail = fmt::format("max deviation {:.3e} over delta in {{1e-3, 0.1, 1, 10}}", worst);
  return c;
}

OracleReport run_oracle_suite(const ExperimentConfig& config) {
  config.validate();
  OracleReport r;
  const RngStreamKey key(config.seed, {0x0a});
  r.checks.push_back(check_evidence_unbiasedness(config.oracle_runs, key.child(1)));
  r.checks.push_back(check_csmc_invariance(config.oracle_chains, 50, ResamplingScheme::Killing, key.child(2)));
  r.checks.push_back(check_pcn_identity());
  r.checks.push_back(check_pcn_stationarity(100000, 1.0, key.child(3)));
  return r;
}

RunReport run_experiment(const ExperimentConfig& config) {
  switch (config.experiment) {
    case Experiment::GpRegression: return run_gp_experiment(config);
    case Experiment::GaussianSb: return run_gaussian_sb_experiment(config);
    case Experiment::SsmOracleSuite: break;
  }
  throw InvalidArgument("run_experiment: use run_oracle_suite for the oracle suite");
}

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw Error("cannot write " + p.string());
  return os;
}

std::string opt_str(const std::optional<double>& v) { return v ? fmt::format("{:.17g}", *v) : std::string(); }

}  // namespace

void write_run_outputs(const RunReport& report, const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  fs::create_directories(root);
  open_out(root / "config.json") << report.config.to_json().dump(2) << "\n";
  {
    auto os = open_out(root / "metrics.csv");
    os << "repeat," << MetricReport::csv_header() << ",acceptance,seconds\n";
    for (const auto& r : report.repeats)
      os << r.repeat << "," << r.metrics.csv_row() << "," << opt_str(r.acceptance) << ","
         << fmt::format("{:.17g}", r.seconds) << "\n";
  }
  json summary;
  json agg = json::object();
  for (const auto& [k, v] : report.aggregate) agg[k] = summary_json(v);
  summary["experiment"] = to_string(report.config.experiment);
  summary["method"] = to_string(report.config.method);
  summary["repeats"] = report.repeats.size();
  summary["aggregate"] = agg;
  summary["total_seconds"] = report.total_seconds;
  summary["bures_note"] = "bures is the squared 2-Wasserstein distance; bures_distance is its square root";
  bool any_acf = false;
  for (const auto& r : report.repeats) any_acf = any_acf || r.worst_acf.size() > 0;
  if (any_acf) {
    auto os = open_out(root / "autocorrelation.csv");
    os << "repeat,lag,worst_dimension_acf\n";
    for (const auto& r : report.repeats)
      for (Index l = 0; l < r.worst_acf.size(); ++l) os << r.repeat << "," << l << "," << fmt::format("{:.17g}", r.worst_acf(l)) << "\n";
    json lag5 = json::array();
    for (const auto& r : report.repeats)
      if (r.worst_acf.size() > 5) lag5.push_back(r.worst_acf(5));
    summary["worst_acf_lag5"] = lag5;
  }
  for (const auto& r : report.repeats) {
    if (r.coalescence.size() == 0) continue;
    auto os = open_out(root / fmt::format("coalescence_{}.csv", r.repeat));
    os << "step";
    for (Index j = 0; j < r.coalescence.cols(); ++j) os << ",d" << j;
    os << "\n";
    for (Index k = 0; k < r.coalescence.rows(); ++k) {
      os << k;
      for (Index j = 0; j < r.coalescence.cols(); ++j) os << "," << fmt::format("{:.17g}", r.coalescence(k, j));
      os << "\n";
    }
  }
  open_out(root / "summary.json") << summary.dump(2) << "\n";
}

void write_oracle_outputs(const OracleReport& report, const ExperimentConfig& config, const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  fs::create_directories(root);
  open_out(root / "config.json") << config.to_json().dump(2) << "\n";
  open_out(root / "summary.json") << report.to_json().dump(2) << "\n";
}

}  // namespace fbb
