#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "kstep/criterion.hpp"
#include "kstep/errors.hpp"
#include "kstep/models/cox_current_status.hpp"
#include "support/cox_oracle.hpp"

using namespace kstep;
using namespace kstep::models;
using kstep::testing::oracle_for;

namespace {

CSDataset fixture() {
  std::ifstream in(std::string(KSTEP_FIXTURE_DIR) + "/cox_tiny.csv");
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return std::get<CSDataset>(from_csv(ss.str()));
}

CSDataset make(std::vector<double> y, std::vector<int> delta, std::vector<double> z) {
  CSDataset d{Vector(long(y.size())), delta, Matrix(long(y.size()), 1)};
  for (std::size_t i = 0; i < y.size(); ++i) d.y[long(i)] = y[i], d.z(long(i), 0) = z[i];
  return d;
}

}  // namespace

TEST_CASE("single event gives a boundary solution") {
  const auto r = cox_cs_npmle(make({1.0}, {1}, {0.0}), Vector::Zero(1));
  CHECK(r.boundary);
  CHECK(std::isinf(r.hazard.values[0]));
  CHECK(r.loglik == 0.0);
  const auto c = cox_cs_npmle(make({1.0, 2.0}, {0, 0}, {0.0, 1.0}), Vector::Zero(1));
  CHECK(c.boundary);
  CHECK(c.hazard.values.maxCoeff() == 0.0);
  CHECK(c.loglik == 0.0);
}

TEST_CASE("two points in increasing order stay apart") {
  const auto d = make({1.0, 2.0}, {0, 1}, {0.0, 0.0});
  const auto r = cox_cs_npmle(d, Vector::Zero(1));
  CHECK(r.hazard.values[0] == 0.0);
  CHECK(std::isinf(r.hazard.values[1]));
  CHECK(r.loglik == doctest::Approx(oracle_for(d, Vector::Zero(1)).solve()).epsilon(1e-6));
}

TEST_CASE("two points in reversed order pool") {
  const auto d = make({1.0, 2.0}, {1, 0}, {0.0, 0.0});
  const auto r = cox_cs_npmle(d, Vector::Zero(1));
  CHECK(r.hazard.values[0] == r.hazard.values[1]);
  CHECK(r.hazard.values[0] == doctest::Approx(std::log(2.0)));
  CHECK(r.loglik == doctest::Approx(2 * std::log(0.5)));
  CHECK(std::abs(r.loglik - oracle_for(d, Vector::Zero(1)).solve()) < 1e-6);
}

TEST_CASE("fixture matches the exhaustive oracle") {
  const auto d = fixture();
  REQUIRE(d.size() == 4);
  for (double th : {0.5, 0.0, -1.3, 2.0}) {
    const Vector theta = Vector::Constant(1, th);
    const double want = oracle_for(d, theta).solve();
    const auto got = cox_cs_npmle(d, theta);
    CHECK(std::abs(got.loglik - want) < 1e-6);
    CHECK(got.loglik >= want - 1e-6);
    const auto icm = cox_cs_npmle(d, theta, NpmleSolver::Icm);
    CHECK(std::abs(icm.loglik - want) < 1e-6);
  }
}

TEST_CASE("criterion ordering and numeric score on the fixture") {
  const auto d = fixture();
  CoxCurrentStatusCriterion c(d);
  CHECK(!c.has_gradient());
  CHECK(!c.has_hessian());
  const double o0 = oracle_for(d, Vector::Zero(1)).solve();
  const double o1 = oracle_for(d, Vector::Constant(1, 0.05)).solve();
  const auto s = numeric_score(c, Vector::Zero(1), 0.05);
  CHECK(s.vector[0] == doctest::Approx((o1 - o0) / (4 * 0.05)).epsilon(1e-5));
  const double oa = oracle_for(d, Vector::Constant(1, -1.0)).solve();
  const double ob = oracle_for(d, Vector::Constant(1, 1.0)).solve();
  CHECK((c.evaluate(Vector::Constant(1, -1.0)) < c.evaluate(Vector::Constant(1, 1.0))) == (oa < ob));
}

TEST_CASE("random small datasets against the oracle") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t n = 2 + rep % 5;
    std::vector<double> y, z;
    std::vector<int> delta;
    for (std::size_t i = 0; i < n; ++i) {
      y.push_back(0.1 + 3.0 * u(rng));
      delta.push_back(u(rng) < 0.5);
      z.push_back(-1 + 2 * u(rng));
    }
    const auto d = make(y, delta, z);
    const Vector theta = Vector::Constant(1, -1 + 2 * u(rng));
    const auto got = cox_cs_npmle(d, theta);
    const double want = oracle_for(d, theta).solve();
    CHECK(got.loglik >= want - 1e-6);
    CHECK(got.loglik <= want + 1e-6);
  }
}

TEST_CASE("hazard is monotone with jumps only at observed times") {
  std::mt19937_64 rng(5);
  Vector theta0 = Vector::Constant(1, 0.5);
  const auto d = generate_current_status(300, theta0, rng);
  for (auto solver : {NpmleSolver::Pava, NpmleSolver::Icm}) {
    const auto r = cox_cs_npmle(d, theta0, solver);
    for (Eigen::Index j = 1; j < r.hazard.values.size(); ++j) {
      CHECK(r.hazard.values[j] >= r.hazard.values[j - 1]);
      CHECK(r.hazard.knots[j] > r.hazard.knots[j - 1]);
    }
    CHECK(r.hazard.values.minCoeff() >= 0.0);
    for (Eigen::Index j = 0; j < r.hazard.knots.size(); ++j) {
      CHECK((d.y.array() == r.hazard.knots[j]).any());
    }
    CHECK(r.hazard(r.hazard.knots[0] - 1.0) == 0.0);
    CHECK(r.hazard(r.hazard.knots[3]) == r.hazard.values[3]);
  }
}

TEST_CASE("ICM agrees with the exact pooled solution") {
  std::mt19937_64 rng(8);
  const auto d = generate_current_status(200, Vector::Constant(1, 0.5), rng);
  for (double th : {0.0, 0.5, 1.0}) {
    const Vector theta = Vector::Constant(1, th);
    const auto exact = cox_cs_npmle(d, theta);
    const auto icm = cox_cs_npmle(d, theta, NpmleSolver::Icm);
    CHECK(icm.converged);
    CHECK(exact.loglik >= icm.loglik - 1e-9);
    CHECK(exact.loglik - icm.loglik < 1e-3);
  }
}

TEST_CASE("criterion is invariant to permuting subjects") {
  std::mt19937_64 rng(2);
  const auto d = generate_current_status(60, Vector::Constant(1, 0.5), rng);
  CSDataset p = d;
  std::vector<long> idx(60);
  std::iota(idx.begin(), idx.end(), 0L);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (long i = 0; i < 60; ++i) {
    p.y[i] = d.y[idx[std::size_t(i)]];
    p.delta[std::size_t(i)] = d.delta[std::size_t(idx[std::size_t(i)])];
    p.z.row(i) = d.z.row(idx[std::size_t(i)]);
  }
  CoxCurrentStatusCriterion a(d), b(p);
  for (double th : {-0.5, 0.3, 1.1}) {
    CHECK(a.evaluate(Vector::Constant(1, th)) == doctest::Approx(b.evaluate(Vector::Constant(1, th))).epsilon(1e-12));
  }
}

TEST_CASE("tied examination times share a knot") {
  const auto d = make({1.0, 1.0, 2.0, 2.0}, {0, 1, 0, 1}, {0.0, 0.0, 0.0, 0.0});
  const auto r = cox_cs_npmle(d, Vector::Zero(1));
  CHECK(r.hazard.knots.size() == 2);
  CHECK(r.hazard.values[0] == doctest::Approx(std::log(2.0)));
  CHECK(r.hazard.values[1] == doctest::Approx(std::log(2.0)));
}

TEST_CASE("nuisance rate and dimension checks") {
  CHECK(kCoxNuisanceRate == Rational(1, 3));
  CHECK_THROWS_AS(cox_cs_npmle(fixture(), Vector::Zero(2)), DomainError);
}
