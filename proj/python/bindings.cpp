#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fbb/harness.hpp"
#include "fbb/mcmc.hpp"
#include "fbb/metrics.hpp"
#include "fbb/reverse.hpp"
#include "fbb/sde.hpp"
#include "fbb/smc.hpp"

namespace py = pybind11;
using namespace fbb;

namespace {

// Configs and reports cross the boundary as JSON text; the Python side wraps them in dicts.
std::string run_json(const std::string& config) {
  const ExperimentConfig c = ExperimentConfig::from_json(nlohmann::json::parse(config));
  if (c.experiment == Experiment::SsmOracleSuite) return run_oracle_suite(c).to_json().dump();
  return run_experiment(c.resolved()).to_json().dump();
}

py::dict metric_dict(const MetricReport& r) {
  py::dict d;
  d["kl"] = r.kl;
  d["kl_reverse"] = r.kl_reverse;
  d["bures"] = r.bures;
  d["bures_distance"] = r.bures_distance;
  d["mean_mae"] = r.mean_mae;
  d["var_mae"] = r.var_mae;
  d["n_samples"] = r.n_samples;
  return d;
}

}  // namespace

PYBIND11_MODULE(_fbb, m) {
  m.doc() = "forward-backward bridging samplers";

  auto base = py::register_exception<Error>(m, "FbbError");
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<NumericalFailure>(m, "NumericalFailure", base.ptr());
  py::register_exception<UnsupportedOperation>(m, "UnsupportedOperation", PyExc_NotImplementedError);

  py::class_<Gaussian>(m, "Gaussian")
      .def(py::init<Vec, Mat>(), py::arg("mean"), py::arg("cov"))
      .def_readwrite("mean", &Gaussian::mean)
      .def_readwrite("cov", &Gaussian::cov)
      .def_property_readonly("dim", &Gaussian::dim)
      .def("__repr__", [](const Gaussian& g) { return "Gaussian(dim=" + std::to_string(g.dim()) + ")"; });

  m.def("fit_gaussian", &fit_gaussian, py::arg("samples"));
  m.def("kl_gaussian", &kl_gaussian, py::arg("p"), py::arg("q"));
  m.def("bures_wasserstein", &bures_wasserstein, py::arg("p"), py::arg("q"));
  m.def("bures_wasserstein_squared", &bures_wasserstein_squared, py::arg("p"), py::arg("q"));
  m.def("evaluate_samples", [](const Mat& s, const Gaussian& t) { return metric_dict(evaluate_samples(s, t)); },
        py::arg("samples"), py::arg("truth"));

  m.def("exponential_kernel", &exponential_kernel, py::arg("tau"), py::arg("lengthscale") = 1.0,
        py::arg("magnitude") = 1.0);
  m.def(
      "gp_posterior",
      [](const Vec& tau, const Vec& y, double noise) {
        GpRegressionSpec spec;
        spec.test_points = tau;
        spec.obs_noise = Vec::Constant(tau.size(), noise);
        return exact_posterior(build_gp_joint(spec), y);
      },
      py::arg("test_points"), py::arg("y"), py::arg("noise") = 1.0);

  m.def(
      "ou_transition",
      [](const Vec& x, double a, double sigma, double s, double t) {
        return exact_transition(LinearSde::constant(x.size(), a, sigma, std::max(t, 1.0)), x, s, t);
      },
      py::arg("x"), py::arg("a"), py::arg("sigma"), py::arg("s"), py::arg("t"));
  m.def(
      "vp_transition",
      [](const Vec& x, double s, double t, double b_min, double b_max) {
        return exact_transition(LinearSde::variance_preserving(x.size(), BetaSchedule{b_min, b_max, 0.0, 1.0}), x,
                                s, t);
      },
      py::arg("x"), py::arg("s"), py::arg("t"), py::arg("b_min") = 0.02, py::arg("b_max") = 5.0);
  m.def(
      "vp_score",
      [](const Gaussian& init, double t, const Vec& x, double b_min, double b_max) {
        return exact_gaussian_score(LinearSde::variance_preserving(x.size(), BetaSchedule{b_min, b_max, 0.0, 1.0}),
                                    init, t, x);
      },
      py::arg("init"), py::arg("t"), py::arg("x"), py::arg("b_min") = 0.02, py::arg("b_max") = 5.0);
  m.def(
      "vp_bridge",
      [](const Vec& x_next, const Vec& x0, double t_k, double t_next, double b_min, double b_max) {
        return bridge_kernel(LinearSde::variance_preserving(x0.size(), BetaSchedule{b_min, b_max, 0.0, 1.0}), x_next,
                             x0, t_k, t_next);
      },
      py::arg("x_next"), py::arg("x0"), py::arg("t_k"), py::arg("t_next"), py::arg("b_min") = 0.02,
      py::arg("b_max") = 5.0);

  m.def(
      "pcn_coefficients",
      [](double delta) {
        const PcnCoefficients c = pcn_coefficients(delta);
        return std::make_pair(c.rho, c.noise);
      },
      py::arg("delta"));
  m.def("pcn_propose", py::overload_cast<const Mat&, double, const Mat&>(&pcn_propose), py::arg("eta"),
        py::arg("delta"), py::arg("fresh"));

  m.def(
      "resample",
      [](const Vec& weights, const std::string& scheme, std::uint64_t seed) {
        return resample(weights, resampling_from_string(scheme), RngStreamKey(seed));
      },
      py::arg("weights"), py::arg("scheme") = "stratified", py::arg("seed") = 0);
  m.def("autocorrelation", &autocorrelation, py::arg("trace"), py::arg("max_lag"));

  m.def("_run_json", &run_json, py::arg("config"), py::call_guard<py::gil_scoped_release>());
}
