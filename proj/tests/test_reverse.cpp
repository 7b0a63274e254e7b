#include <cmath>

#include "doctest.h"
#include "fbb/reverse.hpp"
#include "fbb/smc.hpp"

using namespace fbb;

namespace {

double dense_log_density(const Vec& m, const Mat& c, const Vec& x) {
  const Vec r = x - m;
  return -0.5 * (r.dot(c.inverse() * r) + std::log(c.determinant()) + static_cast<double>(x.size()) * kLog2Pi);
}

// OU dX = a X dt + sigma dW by hand: X_t = e^{at} X_0 + N(0, sigma^2 (e^{2at} - 1) / 2a).
std::pair<double, double> ou(double a, double sigma, double t) {
  return {std::exp(a * t), sigma * sigma * std::expm1(2.0 * a * t) / (2.0 * a)};
}

Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  Vec g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Vec p = x, m = x;
    p(i) += h;
    m(i) -= h;
    g(i) = (f(p) - f(m)) / (2.0 * h);
  }
  return g;
}

Gaussian chain_moments(const ReverseModel& m) {
  Vec mean = m.reference.dense_offset();
  Mat cov = m.reference.dense_cov();
  for (const auto& k : m.kernels) {
    const Mat M = k.dense_map();
    mean = M * mean + k.dense_offset();
    cov = M * cov * M.transpose() + k.dense_cov();
  }
  return Gaussian(mean, cov);
}

Mat exp_kernel(const Vec& tau) {
  Mat c(tau.size(), tau.size());
  for (Index i = 0; i < tau.size(); ++i)
    for (Index j = 0; j < tau.size(); ++j) c(i, j) = std::exp(-std::abs(tau(i) - tau(j)));
  return c;
}

}  // namespace

TEST_CASE("exact gaussian score") {
  const LinearSde ou1 = LinearSde::constant(1, -0.5, 1.0, 1.0);
  const Gaussian std1(Vec::Zero(1), Mat::Identity(1, 1));
  for (double t : {0.0, 0.3, 1.0})
    for (double x : {-2.0, 0.5, 3.0}) CHECK(exact_gaussian_score(ou1, std1, t, Vec::Constant(1, x))(0) == doctest::Approx(-x));

  Mat c(2, 2);
  c << 1.5, 0.4, 0.4, 0.7;
  Vec m(2);
  m << 0.5, -1.0;
  const Gaussian init(m, c);
  const double a = -0.5;
  const LinearSde sde = LinearSde::constant(2, a, 1.0, 1.0);
  const auto [phi, var] = ou(a, 1.0, 0.4);
  CHECK(exact_gaussian_score(sde, init, 0.4, phi * m).norm() < 1e-12);

  Rng rng(RngStreamKey(21));
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double t = rng.uniform();
    const Vec x = 2.0 * rng.normals(2);
    const auto [p, v] = ou(a, 1.0, t);
    const Vec mt = p * m;
    const Mat ct = p * p * c + v * Mat::Identity(2, 2);
    const Vec fd = fd_gradient([&](const Vec& z) { return dense_log_density(mt, ct, z); }, x, 1e-4);
    worst = std::max(worst, (exact_gaussian_score(sde, init, t, x) - fd).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-5);

  CHECK_THROWS_AS(exact_gaussian_score(sde, init, 0.5, Vec::Zero(3)), InvalidArgument);
  const Gaussian point(Vec::Zero(1), Mat::Zero(1, 1));
  CHECK_THROWS_AS(exact_gaussian_score(ou1, point, 0.0, Vec::Zero(1)), NumericalFailure);
}

TEST_CASE("reverse drift") {
  const DriftFunction zero_f = [](const Vec& u, double) { return Vec(Vec::Zero(u.size())); };
  const ScoreFunction zero_s = [](const Vec& u, double) { return Vec(Vec::Zero(u.size())); };
  CHECK(reverse_drift(zero_f, zero_s, Vec::Ones(3), 0.2, 1.0).norm() == 0.0);

  // Stationary OU reverses to itself.
  const LinearSde sde = LinearSde::constant(1, -0.5, 1.0, 1.0);
  const DriftFunction f = [&](const Vec& u, double t) { return sde.drift(u, t); };
  const ScoreFunction s = make_exact_score(sde, Gaussian(Vec::Zero(1), Mat::Identity(1, 1)));
  for (double u : {-1.0, 0.4, 2.5}) CHECK(reverse_drift(f, s, Vec::Constant(1, u), 0.3, 1.0)(0) == doctest::Approx(-0.5 * u));
  CHECK_THROWS_AS(reverse_drift(f, s, Vec::Zero(1), 1.5, 1.0), InvalidArgument);
}

TEST_CASE("euler reverse simulation recovers the prior") {
  const Index d = 5;
  const Mat c = exp_kernel(Vec::LinSpaced(d, 0.0, 5.0));
  const Gaussian prior(Vec::Zero(d), c);
  const LinearSde sde = LinearSde::constant(d, -0.5, 1.0, 1.0);
  const DriftFunction f = [&](const Vec& u, double t) { return sde.drift(u, t); };
  const ScoreFunction score = make_exact_score(sde, prior);
  const int K = 200, n = 10000;
  const double dt = 1.0 / K;
  const auto [phi, var] = ou(-0.5, 1.0, 1.0);
  const Mat cT = phi * phi * c + var * Mat::Identity(d, d);
  const Mat lT = cT.llt().matrixL();
  Rng rng(RngStreamKey(33));
  Mat out(n, d);
  for (int i = 0; i < n; ++i) {
    Vec u = lT * rng.normals(d);
    for (int k = 0; k < K; ++k) u += dt * reverse_drift(f, score, u, k * dt, 1.0) + std::sqrt(dt) * rng.normals(d);
    out.row(i) = u.transpose();
  }
  const Vec mean = out.colwise().mean().transpose();
  for (Index j = 0; j < d; ++j) {
    const double v = (out.col(j).array() - mean(j)).square().sum() / (n - 1);
    CHECK(std::abs(mean(j)) < 3.0 * std::sqrt(c(j, j) / n));
    CHECK(std::abs(v - c(j, j)) < 3.0 * c(j, j) * std::sqrt(2.0 / n));
  }
}

TEST_CASE("discretize reverse") {
  const Index d = 3;
  const Mat c = exp_kernel(Vec::LinSpaced(d, 0.0, 2.0));
  const Gaussian prior(Vec::LinSpaced(d, -0.5, 0.5), c);
  const TimeGrid grid = make_uniform_grid(1.0, 50);

  SUBCASE("small dispersion is nearly deterministic") {
    const double sigma = 1e-3;
    const LinearSde sde = LinearSde::constant(d, -0.5, sigma, 1.0);
    const ReverseModel m = discretize_reverse(sde, prior, grid);
    CHECK(m.steps() == 50);
    for (const auto& k : m.kernels) CHECK(k.dense_cov().norm() <= sigma * sigma * 0.02 * std::sqrt(3.0) * (1 + 1e-9));
  }
  SUBCASE("kernel log density matches the Gaussian entropy") {
    const LinearSde sde = LinearSde::constant(d, -0.5, 1.0, 1.0);
    const ReverseModel m = discretize_reverse(sde, prior, grid);
    const BlockKernel& k = m.kernels[10];
    const Vec z = Vec::Constant(d, 0.3);
    const int n = 20000;
    Rng rng(RngStreamKey(4));
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const Vec next = k.sample(Vec(), z, rng.normals(d));
      s += k.log_density(Vec(), z, Vec(), next);
    }
    const double entropy = 0.5 * (std::log(k.dense_cov().determinant()) + d * (kLog2Pi + 1.0));
    CHECK(std::abs(s / n + entropy) < 3.0 * std::sqrt(d / 2.0 / n));
  }
  SUBCASE("exact scheme chains back to the prior") {
    const LinearSde sde = LinearSde::constant(d, -0.5, 1.0, 1.0);
    const ReverseModel m = discretize_reverse(sde, prior, grid, {ReverseScheme::Exact, ReferenceLaw::Marginal});
    const Gaussian end = chain_moments(m);
    CHECK((end.mean - prior.mean).norm() < 1e-6);
    CHECK((end.cov - c).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("euler error is first order") {
    const LinearSde sde = LinearSde::constant(d, -0.5, 1.0, 1.0);
    auto err = [&](int K) {
      const Gaussian end = chain_moments(discretize_reverse(sde, prior, make_uniform_grid(1.0, K)));
      return (end.mean - prior.mean).norm() + (end.cov - c).norm();
    };
    const double e1 = err(50), e2 = err(100), e3 = err(200);
    CHECK(e1 / e2 > 1.6);
    CHECK(e1 / e2 < 2.4);
    CHECK(e2 / e3 > 1.6);
    CHECK(e2 / e3 < 2.4);
  }
  SUBCASE("gp experiment chain stays close to the prior") {
    const Index n = 100;
    const Mat big = exp_kernel(Vec::LinSpaced(n, 0.0, 5.0));
    const LinearSde sde = LinearSde::constant(n, -0.5, 1.0, 1.0);
    const Gaussian end = chain_moments(discretize_reverse(sde, Gaussian(Vec::Zero(n), big), make_uniform_grid(1.0, 200)));
    CHECK(end.mean.norm() < 1e-10);
    CHECK((end.cov - big).cwiseAbs().maxCoeff() < 0.02);
  }
  SUBCASE("numerically probed score gives the same kernels") {
    const LinearSde sde = LinearSde::constant(d, -0.5, 1.0, 1.0);
    const ReverseModel a = discretize_reverse(sde, prior, grid);
    const ReverseModel b = discretize_reverse(sde, make_exact_score(sde, prior), grid, marginal_moments(sde, prior, 1.0));
    for (int k = 0; k < 50; ++k) {
      const auto ks = static_cast<size_t>(k);
      CHECK((a.kernels[ks].dense_map() - b.kernels[ks].dense_map()).norm() < 1e-6);
      CHECK((a.kernels[ks].dense_offset() - b.kernels[ks].dense_offset()).norm() < 1e-6);
    }
  }
}

TEST_CASE("block kernel V density") {
  // 1 observed plus 2 latent coordinates with a dense kernel.
  Mat M(3, 3);
  M << 0.9, 0.2, -0.1, 0.1, 0.8, 0.0, -0.2, 0.3, 0.7;
  Mat S(3, 3);
  S << 0.5, 0.1, 0.05, 0.1, 0.4, 0.0, 0.05, 0.0, 0.3;
  const Vec cc = Vec::LinSpaced(3, -0.2, 0.2);
  const BlockKernel k = BlockKernel::from_dense(1, M, cc, S);
  const Vec v = Vec::Constant(1, 0.4);
  Vec u(2);
  u << -0.3, 1.1;
  Vec z(3);
  z << v, u;
  const Vec mean = M * z + cc;
  for (double vn : {-1.0, 0.2, 2.0}) {
    const Vec next = Vec::Constant(1, vn);
    CHECK(k.log_bv(next, v, u)(0) == doctest::Approx(dense_log_density(mean.head(1), S.topLeftCorner(1, 1), next)).epsilon(1e-8));
  }
  CHECK((k.dense_map() - M).norm() < 1e-12);
  CHECK((k.dense_cov() - S).norm() < 1e-8);
  const Vec full = Vec::LinSpaced(3, 0.1, 0.9);
  CHECK(k.log_density(v, u, full.head(1), full.tail(2)) == doctest::Approx(dense_log_density(mean, S, full)).epsilon(1e-8));

  Rng rng(RngStreamKey(9));
  const int n = 20000;
  Vec s = Vec::Zero(3);
  for (int i = 0; i < n; ++i) s += k.sample(v, u, rng.normals(3));
  for (Index i = 0; i < 3; ++i) CHECK(std::abs(s(i) / n - mean(i)) < 3.0 * std::sqrt(S(i, i) / n));
}

TEST_CASE("reverse evidence and path density") {
  Mat a(2, 2);
  a << 0.9, 0.2, -0.1, 0.8;
  const LinearSsm ssm = LinearSsm::time_invariant(Gaussian(Vec::Zero(2), Mat::Identity(2, 2)), a, 0.3 * Mat::Identity(2, 2),
                                                  Mat::Identity(2, 2), 0.5 * Mat::Identity(2, 2), 6);
  Rng rng(RngStreamKey(6));
  const auto [x, obs] = simulate_ssm(ssm, rng);
  const ReverseModel m = reverse_model_from_ssm(ssm);
  const Mat v = ssm_observation_path(obs);
  CHECK(reverse_log_evidence(m, v) == doctest::Approx(kalman_evidence_and_smoother(ssm, obs).log_evidence).epsilon(1e-9));

  const Mat path = sample_reverse(m, rng);
  CHECK(path.cols() == 7);
  CHECK(std::isfinite(reverse_log_density(m, path)));
  CHECK_THROWS_AS(reverse_log_density(m, path.leftCols(3)), InvalidArgument);
  CHECK_THROWS_AS(reverse_log_evidence(m, v.leftCols(3)), InvalidArgument);
}

TEST_CASE("forward chain density") {
  const LinearSde sde = LinearSde::constant(2, -0.5, 1.0, 1.0, 1);
  const TimeGrid grid = make_uniform_grid(1.0, 3);
  const ForwardChain ch = forward_chain(sde, grid);
  Rng rng(RngStreamKey(2));
  const Mat p = simulate_chain(ch, Vec::Ones(2), rng);
  double lp = 0.0;
  for (int k = 0; k < 3; ++k) {
    const auto [phi, var] = ou(-0.5, 1.0, grid.delta(k + 1));
    lp += dense_log_density(phi * p.col(k), var * Mat::Identity(2, 2), p.col(k + 1));
  }
  CHECK(chain_log_density(ch, p) == doctest::Approx(lp).epsilon(1e-8));
}

TEST_CASE("csgm conditional drift") {
  const LinearSde sde = LinearSde::constant(2, -0.5, 1.0, 1.0);
  SUBCASE("independent observation") {
    Mat c = Mat::Identity(4, 4);
    c(0, 1) = c(1, 0) = 0.3;
    const JointGaussianTarget t{Gaussian(Vec::Zero(4), c), 2, 2};
    const ScoreFunction score = make_exact_score(sde, t.x_marginal());
    const DriftFunction f = [&](const Vec& u, double s) { return sde.drift(u, s); };
    Vec u(2);
    u << 0.4, -0.8;
    const Vec expect = reverse_drift(f, score, u, 0.3, 1.0);
    CHECK((csgm_conditional_drift(sde, t, Vec::Constant(2, 1.7), u, 0.3) - expect).norm() < 1e-10);
  }
  SUBCASE("finite differences of the conditional marginal") {
    Rng rng(RngStreamKey(17));
    const Mat r = rng.normals(4, 4);
    const Mat c = r * r.transpose() + Mat::Identity(4, 4);
    const JointGaussianTarget t{Gaussian(Vec::Zero(4), c), 2, 2};
    Vec y(2);
    y << 0.6, -0.2;
    // Posterior of x given y by hand.
    const Mat cxy = c.topRightCorner(2, 2), cyy = c.bottomRightCorner(2, 2);
    const Vec mp = cxy * cyy.inverse() * y;
    const Mat cp = c.topLeftCorner(2, 2) - cxy * cyy.inverse() * cxy.transpose();
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const double tr = 0.05 + 0.9 * rng.uniform();
      const Vec u = rng.normals(2);
      const auto [phi, var] = ou(-0.5, 1.0, 1.0 - tr);
      const Vec ms = phi * mp;
      const Mat cs = phi * phi * cp + var * Mat::Identity(2, 2);
      const Vec grad = fd_gradient([&](const Vec& z) { return dense_log_density(ms, cs, z); }, u, 1e-4);
      const Vec expect = 0.5 * u + grad;
      worst = std::max(worst, (csgm_conditional_drift(sde, t, y, u, tr) - expect).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-5);
  }
  const JointGaussianTarget t{Gaussian(Vec::Zero(4), Mat::Identity(4, 4)), 2, 2};
  CHECK_THROWS_AS(csgm_conditional_drift(sde, t, Vec::Zero(3), Vec::Zero(2), 0.1), InvalidArgument);
}

TEST_CASE("twisted kernels") {
  const TimeGrid grid = make_uniform_grid(1.0, 1);
  const DenseKernel bk{Mat::Constant(1, 1, 0.8), Vec::Constant(1, 0.1), Mat::Constant(1, 1, 0.4)};
  const ReverseModel m = reverse_from_kernels(0, grid, Gaussian(Vec::Constant(1, 0.3), Mat::Constant(1, 1, 1.5)), {bk});
  const Vec y = Vec::Constant(1, 1.2);
  const Mat v(0, 2);

  SUBCASE("no twist reproduces the plain filter") {
    const TwistedModel tm = twisted_kernels(m, nullptr, y);
    CHECK_FALSE(tm.twisted);
    CHECK((tm.steps[0].post_map.to_dense() - tm.steps[0].b_map.to_dense()).norm() == 0.0);
    Rng r1(RngStreamKey(5)), r2(RngStreamKey(5));
    const FilterResult a = twisted_particle_filter(tm, v, 16, r1);
    const FilterResult b = particle_filter(m, v, 16, r2);
    CHECK((a.path - b.path).norm() == 0.0);
  }
  SUBCASE("exact twist gives constant weights") {
    // Terminal twist N(y; 2u + 0.5, 0.3); the initial twist is its exact prediction.
    GaussianTwist tw;
    tw.H = {Mat::Constant(1, 1, 1.6), Mat::Constant(1, 1, 2.0)};
    tw.h = {Vec::Constant(1, 0.7), Vec::Constant(1, 0.5)};
    tw.R = {Mat::Constant(1, 1, 1.9), Mat::Constant(1, 1, 0.3)};
    const TwistedModel tm = twisted_kernels(m, &tw, y);
    Rng rng(RngStreamKey(8));
    FilterOptions opt;
    opt.keep_history = true;
    const FilterResult r = twisted_particle_filter(tm, v, 32, rng, opt);
    const Vec& lw = r.history.front().log_weights;
    CHECK(lw.maxCoeff() - lw.minCoeff() < 1e-10);
    // u_1 ~ N(0.34, 1.36), so y ~ N(1.18, 5.74).
    CHECK(r.log_z == doctest::Approx(dense_log_density(Vec::Constant(1, 1.18), Mat::Constant(1, 1, 5.74), y)).epsilon(1e-8));
  }
  SUBCASE("malformed twist") {
    GaussianTwist tw;
    tw.H = {Mat::Constant(1, 1, 1.0)};
    tw.h = {Vec::Zero(1)};
    tw.R = {Mat::Identity(1, 1)};
    CHECK_THROWS_AS(twisted_kernels(m, &tw, y), InvalidArgument);
  }
}

TEST_CASE("gp observation twist") {
  const Index d = 3;
  const Gaussian prior(Vec::Zero(d), exp_kernel(Vec::LinSpaced(d, 0.0, 2.0)));
  const LinearSde sde = LinearSde::constant(d, -0.5, 1.0, 1.0);
  const TimeGrid grid = make_uniform_grid(1.0, 4);
  const GaussianTwist tw = gp_observation_twist(sde, prior, Mat::Identity(d, d), grid);
  REQUIRE(tw.H.size() == 5);
  // Last reverse step is time zero, where the twist is the likelihood itself.
  CHECK((tw.H[4] - Mat::Identity(d, d)).norm() == 0.0);
  // Elsewhere H is the Tweedie map E[X_0 | X_s].
  const auto [phi, var] = ou(-0.5, 1.0, 0.5);
  const Mat cs = phi * phi * prior.cov + var * Mat::Identity(d, d);
  CHECK((tw.H[2] - phi * prior.cov * cs.inverse()).norm() < 1e-8);
}
