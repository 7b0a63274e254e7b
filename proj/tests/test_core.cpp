#include <cmath>

#include "doctest.h"
#include "fbb/core.hpp"
#include "fbb/linear_op.hpp"
#include "fbb/rng.hpp"

using namespace fbb;

TEST_CASE("uniform grid") {
  const TimeGrid g = make_uniform_grid(1.0, 2);
  REQUIRE(g.points().size() == 3);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == doctest::Approx(0.5));
  CHECK(g[2] == 1.0);

  const TimeGrid fine = make_uniform_grid(1.0, 200);
  CHECK(fine.steps() == 200);
  for (int k = 1; k <= 200; ++k) CHECK(fine.delta(k) == doctest::Approx(0.005).epsilon(1e-12));
  CHECK(fine.horizon() == 1.0);

  const TimeGrid two = make_uniform_grid(2.0, 1);
  CHECK(two.points() == std::vector<double>{0.0, 2.0});

  CHECK_THROWS_AS(make_uniform_grid(0.0, 3), InvalidArgument);
  CHECK_THROWS_AS(make_uniform_grid(-1.0, 3), InvalidArgument);
  CHECK_THROWS_AS(make_uniform_grid(1.0, 0), InvalidArgument);
  CHECK_THROWS_AS(TimeGrid({0.0, 0.5, 0.5}), InvalidArgument);
  CHECK_THROWS_AS(TimeGrid({0.1, 0.5}), InvalidArgument);
}

TEST_CASE("gaussian invariants") {
  Mat c(2, 2);
  c << 1.0, 0.3, 0.2, 1.0;
  CHECK_THROWS_AS(Gaussian(Vec::Zero(2), c).validate(), InvalidArgument);
  Mat neg(2, 2);
  neg << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(Gaussian(Vec::Zero(2), neg).validate(), InvalidArgument);
  CHECK_THROWS_AS(Gaussian(Vec::Zero(3), Mat::Identity(2, 2)).validate(), InvalidArgument);
  CHECK_NOTHROW(Gaussian(Vec::Zero(2), Mat::Identity(2, 2)).validate());
}

TEST_CASE("gaussian conditioning") {
  SUBCASE("independent blocks") {
    const Gaussian joint(Vec::Zero(2), Mat::Identity(2, 2));
    const Gaussian post = gaussian_condition(joint, {1}, Vec::Constant(1, 5.0));
    CHECK(post.mean(0) == doctest::Approx(0.0));
    CHECK(post.cov(0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("correlated pair against the hand formula") {
    Mat c(2, 2);
    c << 1.0, 0.5, 0.5, 1.0;
    const Gaussian post = gaussian_condition(Gaussian(Vec::Zero(2), c), {1}, Vec::Constant(1, 1.0));
    CHECK(post.mean(0) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(post.cov(0, 0) == doctest::Approx(0.75).epsilon(1e-9));
  }
  SUBCASE("empty index set is the marginal") {
    Mat c(2, 2);
    c << 2.0, 0.5, 0.5, 1.0;
    Vec m(2);
    m << 1.0, -1.0;
    const Gaussian post = gaussian_condition(Gaussian(m, c), {}, Vec());
    CHECK((post.mean - m).norm() < 1e-12);
    CHECK((post.cov - c).norm() < 1e-12);
  }
  SUBCASE("sequential conditioning equals joint conditioning") {
    Rng rng(RngStreamKey(3));
    const Mat a = rng.normals(5, 5);
    const Mat cov = a * a.transpose() + Mat::Identity(5, 5);
    const Vec mean = rng.normals(5);
    const Gaussian joint(mean, cov);
    Vec y(3);
    y << 0.3, -1.2, 0.7;
    const Gaussian all = gaussian_condition(joint, {2, 3, 4}, y);
    // Condition on index 4 first; the remaining indices shift down.
    const Gaussian step1 = gaussian_condition(joint, {4}, y.tail(1));
    const Gaussian step2 = gaussian_condition(step1, {2, 3}, y.head(2));
    CHECK((all.mean - step2.mean).norm() <= 1e-8 * (1.0 + all.mean.norm()));
    CHECK((all.cov - step2.cov).norm() <= 1e-8 * all.cov.norm());
  }
  SUBCASE("bad indices") {
    const Gaussian joint(Vec::Zero(2), Mat::Identity(2, 2));
    CHECK_THROWS_AS(gaussian_condition(joint, {2}, Vec::Zero(1)), InvalidArgument);
    CHECK_THROWS_AS(gaussian_condition(joint, {0, 0}, Vec::Zero(2)), InvalidArgument);
  }
}

TEST_CASE("philox known answer") {
  const auto out = philox4x32({0, 0, 0, 0}, {0, 0});
  CHECK(out[0] == 0x6627e8d5u);
  CHECK(out[1] == 0xe169c58du);
  CHECK(out[2] == 0xbc57ac4cu);
  CHECK(out[3] == 0x9b00dbd8u);
}

TEST_CASE("standard normals") {
  const RngStreamKey key(7, {1, 2});
  const Mat a = standard_normals(key, 4, 3);
  const Mat b = standard_normals(key, 4, 3);
  CHECK(a == b);
  CHECK(a != standard_normals(key.child(0), 4, 3));

  const Index n = 1000000;
  const Mat big = standard_normals(RngStreamKey(11), n, 1);
  const double mean = big.mean();
  const double var = (big.array() - mean).square().sum() / static_cast<double>(n - 1);
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.01);

  const Mat other = standard_normals(RngStreamKey(11, {5}), n, 1);
  const double rho = (big.array() * other.array()).mean();
  CHECK(std::abs(rho) < 0.01);

  CHECK_THROWS_AS(standard_normals(key, -1, 2), InvalidArgument);
}

TEST_CASE("rng uniform and below") {
  Rng rng(RngStreamKey(5));
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo > 0.0);
  CHECK(hi < 1.0);
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 30000; ++i) ++counts[rng.below(3)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 3 * std::sqrt(30000 * (1.0 / 3) * (2.0 / 3)) + 1);
  CHECK_THROWS_AS(rng.below(0), InvalidArgument);
}

TEST_CASE("factorization and jitter") {
  Mat singular = Mat::Zero(3, 3);
  singular(0, 0) = 1.0;
  const CovFactor f(singular);
  CHECK(std::isfinite(f.log_det()));
  const Mat sq = sqrtm_psd(Mat::Identity(2, 2) * 4.0);
  CHECK((sq - 2.0 * Mat::Identity(2, 2)).norm() < 1e-12);
  Vec w(3);
  w << -1e300, 0.0, -1e300;
  CHECK(log_sum_exp(w) == doctest::Approx(0.0));
}

TEST_CASE("linear operator structure") {
  Mat d = Mat::Zero(3, 3);
  d.diagonal() << 1.0, 2.0, 3.0;
  CHECK(LinearOp::from_dense(d).kind() == LinearOp::Kind::Diagonal);
  CHECK(LinearOp::from_dense(2.0 * Mat::Identity(3, 3)).kind() == LinearOp::Kind::Scaled);
  CHECK(LinearOp::from_dense(Mat::Zero(3, 3)).kind() == LinearOp::Kind::Zero);
  Mat full = d;
  full(0, 2) = 0.5;
  const LinearOp op = LinearOp::from_dense(full);
  CHECK(op.kind() == LinearOp::Kind::Dense);
  const Mat x = Mat::Ones(3, 2);
  CHECK((op.apply(x) - full * x).norm() < 1e-14);

  Mat cov(2, 2);
  cov << 2.0, 0.5, 0.5, 1.0;
  const CovOp c = CovOp::from_dense(cov);
  Vec r(2);
  r << 0.3, -0.4;
  const double expect = -0.5 * (r.dot(cov.inverse() * r) + std::log(cov.determinant()) + 2 * kLog2Pi);
  // Factorizations carry a 1e-9 relative jitter.
  CHECK(c.log_density(r) == doctest::Approx(expect).epsilon(1e-8));
  CHECK(CovOp::from_dense(Mat::Identity(4, 4) * 3.0).kind() == CovOp::Kind::ScaledIdentity);
}
