#include <cmath>
#include <string>

#include "doctest.h"
#include "fbb/mcmc.hpp"

using namespace fbb;

namespace {

// (y, x) jointly Gaussian with Var y = 2, Var x = 1, Cov = 0.8; given y = 1
// the posterior of x is N(0.4, 0.68).
struct ExactModel {
  LinearSde sde = LinearSde::constant(2, -0.5, 1.0, 1.0, 1);
  TimeGrid grid;
  ConditionalProblem problem;
  static constexpr double post_mean = 0.4;
  static constexpr double post_var = 0.68;

  ExactModel(int K, ReverseScheme scheme, double sigma = 1.0) : sde(LinearSde::constant(2, -0.5, sigma, 1.0, 1)), grid(make_uniform_grid(1.0, K)) {
    Mat c(2, 2);
    c << 2.0, 0.8, 0.8, 1.0;
    const Gaussian yx(Vec::Zero(2), c);
    problem.forward = forward_chain(sde, grid);
    problem.reverse = discretize_reverse(sde, yx, grid, {scheme, ReferenceLaw::Marginal});
    problem.y = Vec::Constant(1, 1.0);
  }
};

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments(const Vec& x) {
  const double m = x.mean();
  return {m, (x.array() - m).square().sum() / static_cast<double>(x.size() - 1)};
}

void check_posterior(const Vec& draws) {
  const auto n = static_cast<double>(draws.size());
  const Moments m = moments(draws);
  CHECK(std::abs(m.mean - ExactModel::post_mean) < 3 * std::sqrt(ExactModel::post_var / n));
  CHECK(std::abs(m.var - ExactModel::post_var) < 3 * ExactModel::post_var * std::sqrt(2.0 / n));
}

}  // namespace

TEST_CASE("pcn coefficients") {
  for (double d : {1e-3, 0.1, 1.0, 10.0}) {
    const PcnCoefficients c = pcn_coefficients(d);
    CHECK(std::abs(c.rho * c.rho + c.noise * c.noise - 1.0) < 1e-14);
    CHECK(std::abs(std::pow(2.0 / (2.0 + d), 2) + 1.0 - 4.0 / (4.0 + 4.0 * d + d * d) - 1.0) < 1e-14);
  }
  const Mat eta = standard_normals(RngStreamKey(1), 3, 4);
  const Mat same = pcn_propose(eta, 1e-12, RngStreamKey(2));
  CHECK((same - eta).norm() <= 1e-6 * eta.norm());
  CHECK_THROWS_AS(pcn_coefficients(0.0), InvalidArgument);
  CHECK_THROWS_AS(pcn_coefficients(-1.0), InvalidArgument);
  CHECK_THROWS_AS(pcn_propose(eta, 0.1, Mat::Zero(2, 2)), InvalidArgument);

  const Index n = 100000;
  const Mat start = standard_normals(RngStreamKey(3), n, 1);
  const Mat next = pcn_propose(start, 1.0, RngStreamKey(4));
  const Moments m = moments(next.col(0));
  CHECK(std::abs(m.mean) < 0.02);
  CHECK(std::abs(m.var - 1.0) < 0.03);
}

TEST_CASE("gibbs csmc on an exact model") {
  SUBCASE("posterior is invariant") {
    const ExactModel em(10, ReverseScheme::Exact);
    const int chains = 5000;
    for (bool trusted : {false, true}) {
      CAPTURE(trusted);
      GibbsOptions opt;
      opt.trusted_reference_init = trusted;
      Rng rng(RngStreamKey(5));
      Vec out(chains);
      for (int c = 0; c < chains; ++c) {
        GibbsState st;
        st.x0 = Vec::Constant(1, ExactModel::post_mean + std::sqrt(ExactModel::post_var) * rng.normal());
        for (int it = 0; it < 5; ++it)
          st = gibbs_csmc_step(st, em.problem, 5, RngStreamKey(6, {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(it)}), opt);
        out(c) = st.x0(0);
      }
      check_posterior(out);
    }
  }
  SUBCASE("path correction always accepts under exact reversal") {
    const ExactModel em(10, ReverseScheme::Exact);
    GibbsOptions opt;
    opt.mh_correction = true;
    GibbsState st = gibbs_init(em.problem, Vec::Zero(1), 5, RngStreamKey(7));
    REQUIRE(st.path.cols() == 11);
    for (int it = 0; it < 200; ++it) st = gibbs_csmc_step(st, em.problem, 5, RngStreamKey(8, {static_cast<std::uint64_t>(it)}), opt);
    CHECK(st.mh_trials == 200);
    CHECK(st.mh_accepts >= 198);
    CHECK(st.iteration == 200);
  }
  SUBCASE("vanishing noise returns the state") {
    const ExactModel em(20, ReverseScheme::Exact, 1e-4);
    GibbsState st;
    st.x0 = Vec::Constant(1, 0.7);
    const GibbsState next = gibbs_csmc_step(st, em.problem, 4, RngStreamKey(9));
    CHECK(std::abs(next.x0(0) - 0.7) < 1e-3);
  }
  SUBCASE("argument checks") {
    const ExactModel em(4, ReverseScheme::Exact);
    GibbsState st;
    st.x0 = Vec::Zero(2);
    CHECK_THROWS_AS(gibbs_csmc_step(st, em.problem, 4, RngStreamKey(1)), InvalidArgument);
    st.x0 = Vec::Constant(1, std::nan(""));
    CHECK_THROWS_AS(gibbs_csmc_step(st, em.problem, 4, RngStreamKey(1)), NumericalFailure);
    ConditionalProblem bad = em.problem;
    bad.y = Vec::Zero(3);
    CHECK_THROWS_AS(gibbs_init(bad, Vec::Zero(1), 4, RngStreamKey(1)), InvalidArgument);
  }
}

TEST_CASE("path correction ratio") {
  CHECK(mh_path_log_ratio(-1.0, -2.0, -1.0, -2.0) == 0.0);
  CHECK(mh_path_log_ratio(-1.0, -2.0, -3.0, -2.5) == doctest::Approx(1.5));
  CHECK_THROWS_AS(mh_path_log_ratio(-1.0, std::nan(""), 0.0, 0.0), NumericalFailure);
  CHECK_THROWS_AS(mh_path_log_ratio(-INFINITY, 0.0, 0.0, 0.0), NumericalFailure);

  // log alpha = -0.7: empirical acceptance against exp(-0.7).
  Rng rng(RngStreamKey(10));
  const int n = 10000;
  int acc = 0;
  for (int i = 0; i < n; ++i) acc += mh_path_correction(-2.0, -1.0, -1.5, -1.2, rng).accept ? 1 : 0;
  const double p = std::exp(-0.7);
  CHECK(std::abs(static_cast<double>(acc) / n - p) < 3 * std::sqrt(p * (1 - p) / n));

  SUBCASE("hand densities on a two-step path") {
    // Euler reversal is inexact, so the ratio is nontrivial; p is checked against the OU transition.
    const ExactModel em(2, ReverseScheme::Euler);
    Mat a(2, 3), b(2, 3);
    a << 1.0, 0.8, 0.5, 0.3, 0.1, -0.2;
    b << 1.0, 1.2, 0.9, 0.3, 0.6, 0.4;
    const double phi = std::exp(-0.25), var = -std::expm1(-0.5);
    auto p_hand = [&](const Mat& z) {
      double lp = 0.0;
      for (int k = 0; k < 2; ++k) {
        const Vec r = z.col(k + 1) - phi * z.col(k);
        lp += -0.5 * (r.squaredNorm() / var + 2.0 * std::log(var) + 2.0 * kLog2Pi);
      }
      return lp;
    };
    CHECK(chain_log_density(em.problem.forward, a) == doctest::Approx(p_hand(a)).epsilon(1e-8));
    const double expect = (reverse_log_density(em.problem.reverse, reverse_columns(a)) - p_hand(a)) -
                          (reverse_log_density(em.problem.reverse, reverse_columns(b)) - p_hand(b));
    Rng r2(RngStreamKey(11));
    const MhDecision d = mh_path_correction(em.problem, a, b, r2);
    CHECK(d.log_alpha == doctest::Approx(std::min(0.0, expect)).epsilon(1e-8));
  }
}

TEST_CASE("general pseudo-marginal acceptance") {
  CHECK(pmmh_general_acceptance(1.0, 1.0, 2.0, 2.0, 3.0, 3.0) == 0.0);
  // Reversible proposal: q and p terms cancel.
  CHECK(pmmh_general_acceptance(-3.0, -4.5, -1.0, -2.0, -2.0, -1.0) == doctest::Approx(1.5));
  // Independent proposal q = p.
  CHECK(pmmh_general_acceptance(-3.0, -4.5, -7.0, -6.0, -6.0, -7.0) == doctest::Approx(1.5));
}

TEST_CASE("pmcmc") {
  SUBCASE("posterior is invariant") {
    const ExactModel em(5, ReverseScheme::Exact);
    for (double delta : {0.001, 0.005}) {
      CAPTURE(delta);
      const int chains = 3000;
      Vec out(chains);
      double acc = 0.0;
      for (int c = 0; c < chains; ++c) {
        const RngStreamKey key(12, {static_cast<std::uint64_t>(c)});
        PmcmcState st = pmcmc_init(em.problem, 10, key.child(0));
        for (int it = 0; it < 30; ++it) st = pmcmc_step(st, em.problem, 10, delta, key.child(1).child(static_cast<std::uint64_t>(it)));
        out(c) = st.x0(0);
        acc += st.acceptance_rate();
      }
      check_posterior(out);
      CHECK(acc / chains > 0.05);
    }
  }
  SUBCASE("noise replay") {
    const ExactModel em(6, ReverseScheme::Euler);
    PmcmcOptions cached, replayed;
    replayed.cache_noise = false;
    PmcmcState a = pmcmc_init(em.problem, 8, RngStreamKey(13), cached);
    PmcmcState b = pmcmc_init(em.problem, 8, RngStreamKey(13), replayed);
    for (int it = 0; it < 25; ++it) {
      a = pmcmc_step(a, em.problem, 8, 0.3, RngStreamKey(14, {static_cast<std::uint64_t>(it)}), cached);
      b = pmcmc_step(b, em.problem, 8, 0.3, RngStreamKey(14, {static_cast<std::uint64_t>(it)}), replayed);
    }
    CHECK(b.eta.size() == 0);
    CHECK(a.accept_count == b.accept_count);
    CHECK(a.accept_count > 0);
    CHECK((a.x0 - b.x0).norm() == 0.0);
    CHECK((replay_noise(b, 1, 6) - a.eta).norm() < 1e-12);
  }
  SUBCASE("acceptance rises as delta shrinks under exact evidence") {
    const ExactModel em(10, ReverseScheme::Euler);
    PmcmcOptions opt;
    opt.exact_evidence = true;
    std::vector<double> rates;
    for (double delta : {0.005, 0.05, 0.5}) {
      PmcmcState st = pmcmc_init(em.problem, 4, RngStreamKey(15), opt);
      for (int it = 0; it < 4000; ++it) st = pmcmc_step(st, em.problem, 4, delta, RngStreamKey(16, {static_cast<std::uint64_t>(it)}), opt);
      rates.push_back(st.acceptance_rate());
    }
    CAPTURE(rates[0]);
    CAPTURE(rates[1]);
    CAPTURE(rates[2]);
    CHECK(rates[0] > rates[1]);
    CHECK(rates[1] > rates[2]);
  }
  SUBCASE("tiny delta with exact evidence accepts") {
    const ExactModel em(5, ReverseScheme::Euler);
    PmcmcOptions opt;
    opt.exact_evidence = true;
    PmcmcState st = pmcmc_init(em.problem, 4, RngStreamKey(17), opt);
    for (int it = 0; it < 50; ++it) st = pmcmc_step(st, em.problem, 4, 1e-12, RngStreamKey(18, {static_cast<std::uint64_t>(it)}), opt);
    CHECK(st.accept_count >= 49);
  }
  SUBCASE("non-separable forward dynamics") {
    ExactModel em(3, ReverseScheme::Euler);
    Mat M(2, 2);
    M << 0.9, 0.1, 0.0, 0.9;
    const std::vector<DenseKernel> ks(3, DenseKernel{M, Vec::Zero(2), 0.1 * Mat::Identity(2, 2)});
    em.problem.forward = forward_chain(1, em.grid, ks);
    CHECK_THROWS_AS(pmcmc_init(em.problem, 4, RngStreamKey(1)), UnsupportedOperation);
    CHECK_THROWS_AS(materialize_observation_path(em.problem.forward, Vec::Zero(1), Mat::Zero(1, 3)), UnsupportedOperation);
  }
  SUBCASE("observation path from innovations") {
    const ExactModel em(4, ReverseScheme::Euler);
    const Mat eta = standard_normals(RngStreamKey(19), 1, 4);
    const Mat y = materialize_observation_path(em.problem.forward, Vec::Constant(1, 1.0), eta);
    const double phi = std::exp(-0.125), sd = std::sqrt(-std::expm1(-0.25));
    double prev = 1.0;
    for (int k = 0; k < 4; ++k) {
      prev = phi * prev + sd * eta(0, k);
      CHECK(y(0, k + 1) == doctest::Approx(prev).epsilon(1e-8));
    }
  }
}

TEST_CASE("run chain") {
  const ChainKernel identity = [](const Vec& x, std::uint64_t) { return std::pair<Vec, bool>{x, true}; };
  const ChainOutput out = run_chain(identity, Vec::Constant(2, 1.5), 10, 0);
  CHECK(out.samples.rows() == 10);
  CHECK((out.trace.array() == 1.5).all());
  CHECK(out.acceptance_rate == 1.0);
  CHECK(run_chain(identity, Vec::Zero(1), 10, 2, 3).samples.rows() == 3);
  CHECK_THROWS_AS(run_chain(identity, Vec::Zero(1), 5, 5), InvalidArgument);
  CHECK_THROWS_AS(run_chain(identity, Vec::Zero(1), 5, 0, 0), InvalidArgument);

  const ChainKernel failing = [](const Vec& x, std::uint64_t i) {
    if (i == 3) throw NumericalFailure("boom");
    return std::pair<Vec, bool>{x, false};
  };
  try {
    run_chain(failing, Vec::Zero(1), 10, 0);
    FAIL("expected failure");
  } catch (const NumericalFailure& e) {
    CHECK(std::string(e.what()).find("iteration 3") != std::string::npos);
  }
}

TEST_CASE("autocorrelation") {
  const Index n = 100000;
  const Mat iid = standard_normals(RngStreamKey(20), n, 1);
  const Mat a = autocorrelation(iid, 5);
  CHECK(a.row(0).isOnes());
  CHECK(a.bottomRows(5).cwiseAbs().maxCoeff() < 0.01);

  Mat ar(n, 1);
  Rng rng(RngStreamKey(21));
  ar(0, 0) = rng.normal() / std::sqrt(1 - 0.81);
  for (Index i = 1; i < n; ++i) ar(i, 0) = 0.9 * ar(i - 1, 0) + rng.normal();
  CHECK(std::abs(autocorrelation(ar, 1)(1, 0) - 0.9) < 0.01);

  const Mat constant = Mat::Constant(20, 1, 3.0);
  CHECK(autocorrelation(constant, 4).isOnes());
  CHECK_THROWS_AS(autocorrelation(constant, 20), InvalidArgument);

  Mat c1(2, 2), c2(2, 2);
  c1 << 1.0, 1.0, 0.2, 0.6;
  c2 << 1.0, 1.0, 0.4, 0.2;
  const Vec w = worst_dimension_autocorrelation({c1, c2});
  CHECK(w(0) == 1.0);
  CHECK(w(1) == doctest::Approx(0.4));
}
