#include <algorithm>
#include <cmath>
#include <string>

#include "doctest.h"
#include "fbb/metrics.hpp"
#include "fbb/rng.hpp"

using namespace fbb;

namespace {

Gaussian g1(double m, double v) { return Gaussian(Vec::Constant(1, m), Mat::Constant(1, 1, v)); }

// KL(p || q) for 1-d Gaussians by trapezoidal quadrature.
double kl_quadrature(double mp, double vp, double mq, double vq) {
  auto logpdf = [](double x, double m, double v) { return -0.5 * ((x - m) * (x - m) / v + std::log(2 * M_PI * v)); };
  const double lo = mp - 20 * std::sqrt(vp), hi = mp + 20 * std::sqrt(vp);
  const int n = 200000;
  const double h = (hi - lo) / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * h;
    const double lp = logpdf(x, mp, vp);
    const double f = std::exp(lp) * (lp - logpdf(x, mq, vq));
    s += (i == 0 || i == n) ? 0.5 * f : f;
  }
  return s * h;
}

Gaussian random_gaussian(Rng& rng, Index d) {
  const Mat a = rng.normals(d, d);
  return Gaussian(rng.normals(d), a * a.transpose() + 0.1 * Mat::Identity(d, d));
}

Mat random_orthogonal(Rng& rng, Index d) {
  Eigen::HouseholderQR<Mat> qr(rng.normals(d, d));
  return qr.householderQ();
}

Gaussian rotate(const Gaussian& g, const Mat& q) { return Gaussian(q * g.mean, q * g.cov * q.transpose()); }

}  // namespace

TEST_CASE("fit gaussian") {
  const Mat same = Mat::Constant(10, 2, 3.0);
  const Gaussian f = fit_gaussian(same);
  CHECK((f.mean.array() == 3.0).all());
  CHECK(f.cov.cwiseAbs().maxCoeff() < 1e-8);

  const Index n = 100000;
  const Mat x = standard_normals(RngStreamKey(1), n, 3);
  const Gaussian g = fit_gaussian(x);
  for (Index i = 0; i < 3; ++i) {
    CHECK(std::abs(g.mean(i)) < 3 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(g.cov(i, i) - 1.0) < 3 * std::sqrt(2.0 / n));
    for (Index j = 0; j < i; ++j) CHECK(std::abs(g.cov(i, j)) < 3 / std::sqrt(static_cast<double>(n)));
  }

  Mat a(3, 3);
  a << 2.0, 0.1, 0.0, -0.5, 1.0, 0.3, 0.2, 0.0, 0.7;
  const Vec b = Vec::LinSpaced(3, -1.0, 1.0);
  const Mat small = x.topRows(1000);
  const Gaussian base = fit_gaussian(small);
  const Gaussian moved = fit_gaussian((small * a.transpose()).rowwise() + b.transpose());
  CHECK((moved.mean - (a * base.mean + b)).norm() < 1e-10);
  CHECK((moved.cov - a * base.cov * a.transpose()).norm() < 1e-6);

  CHECK_THROWS_AS(fit_gaussian(Mat::Zero(1, 3)), InvalidArgument);
}

TEST_CASE("kl divergence") {
  CHECK(kl_gaussian(g1(0, 1), g1(0, 1)) == 0.0);
  CHECK(kl_gaussian(g1(0, 1), g1(1, 1)) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(kl_gaussian(g1(0, 1), g1(1, 1)) == doctest::Approx(kl_quadrature(0, 1, 1, 1)).epsilon(1e-6));
  const double a = kl_gaussian(g1(0, 1), g1(0, 4)), b = kl_gaussian(g1(0, 4), g1(0, 1));
  CHECK(a == doctest::Approx(kl_quadrature(0, 1, 0, 4)).epsilon(1e-6));
  CHECK(b == doctest::Approx(kl_quadrature(0, 4, 0, 1)).epsilon(1e-6));
  CHECK(a == doctest::Approx(std::log(2.0) - 0.375).epsilon(1e-12));
  CHECK(b == doctest::Approx(1.5 - std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(a - b) > 0.4);

  Rng rng(RngStreamKey(2));
  for (int i = 0; i < 50; ++i) {
    const Gaussian p = random_gaussian(rng, 4), q = random_gaussian(rng, 4);
    CHECK(kl_gaussian(p, q) > 0.0);
    CHECK(kl_gaussian(p, p) < 1e-10);
    const Mat o = random_orthogonal(rng, 4);
    CHECK(kl_gaussian(rotate(p, o), rotate(q, o)) == doctest::Approx(kl_gaussian(p, q)).epsilon(1e-8));
  }
  Mat sing = Mat::Identity(2, 2);
  sing(1, 1) = 0.0;
  CHECK_THROWS_AS(kl_gaussian(Gaussian(Vec::Zero(2), Mat::Identity(2, 2)), Gaussian(Vec::Zero(2), sing)), NumericalFailure);
  CHECK_THROWS_AS(kl_gaussian(g1(0, 1), Gaussian(Vec::Zero(2), Mat::Identity(2, 2))), InvalidArgument);
}

TEST_CASE("bures wasserstein") {
  CHECK(bures_wasserstein(g1(0, 1), g1(0, 1)) < 1e-7);
  CHECK(bures_wasserstein(g1(0, 1), g1(0, 4)) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(bures_wasserstein_squared(g1(0, 1), g1(2, 4)) == doctest::Approx(5.0).epsilon(1e-10));

  Rng rng(RngStreamKey(3));
  for (int i = 0; i < 30; ++i) {
    // Commuting pair: shared eigenvectors.
    const Mat o = random_orthogonal(rng, 3);
    const Vec lp = rng.normals(3).cwiseAbs().array() + 0.1, lq = rng.normals(3).cwiseAbs().array() + 0.1;
    const Gaussian p(rng.normals(3), o * lp.asDiagonal() * o.transpose());
    const Gaussian q(rng.normals(3), o * lq.asDiagonal() * o.transpose());
    const double expect = std::sqrt((p.mean - q.mean).squaredNorm() + (lp.cwiseSqrt() - lq.cwiseSqrt()).squaredNorm());
    CHECK(bures_wasserstein(p, q) == doctest::Approx(expect).epsilon(1e-8));
  }
  for (int i = 0; i < 30; ++i) {
    const Gaussian a = random_gaussian(rng, 4), b = random_gaussian(rng, 4), c = random_gaussian(rng, 4);
    const double ab = bures_wasserstein(a, b), ba = bures_wasserstein(b, a);
    CHECK(std::abs(ab - ba) < 1e-8);
    CHECK(ab <= bures_wasserstein(a, c) + bures_wasserstein(c, b) + 1e-8);
    const Mat o = random_orthogonal(rng, 4);
    CHECK(std::abs(bures_wasserstein(rotate(a, o), rotate(b, o)) - ab) < 1e-8);
  }
}

TEST_CASE("marginal errors and reports") {
  const Gaussian t(Vec::Zero(3), Mat::Identity(3, 3));
  const MarginalErrors same = marginal_maes(t, t);
  CHECK(same.mean_mae == 0.0);
  CHECK(same.var_mae == 0.0);
  const Gaussian shifted(Vec::Constant(3, -0.25), 2.0 * Mat::Identity(3, 3));
  const MarginalErrors e = marginal_maes(shifted, t);
  CHECK(e.mean_mae == doctest::Approx(0.25));
  CHECK(e.var_mae == doctest::Approx(1.0));
  CHECK_THROWS_AS(marginal_maes(g1(0, 1), t), InvalidArgument);

  const Mat x = standard_normals(RngStreamKey(4), 5000, 3);
  const MetricReport r = evaluate_samples(x, t);
  CHECK(r.n_samples == 5000);
  CHECK(r.bures_distance == doctest::Approx(std::sqrt(r.bures)));
  CHECK(r.kl > 0.0);
  CHECK(r.kl < 0.01);
  CHECK(MetricReport::csv_header().find("bures") != std::string::npos);
  const std::string row = r.csv_row();
  CHECK(std::count(row.begin(), row.end(), ',') == 6);
  MetricReport bad = r;
  bad.kl = -1.0;
  CHECK_THROWS_AS(bad.validate(), NumericalFailure);
  CHECK_THROWS_AS(evaluate_samples(x, g1(0, 1)), InvalidArgument);
}
