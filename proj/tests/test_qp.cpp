#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "mgls/qp.hpp"

using namespace mgls;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

qp::Problem random_box_qp(std::uint64_t seed, int n, VectorXd& lo, VectorXd& hi)
{
  Rng rng(seed);
  MatrixXd R(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) R(i, j) = rng.normal(0.0, 1.0);
  qp::Problem p;
  p.P = R.transpose() * R + 0.5 * MatrixXd::Identity(n, n);
  p.q = VectorXd(n);
  for (int i = 0; i < n; ++i) p.q(i) = rng.normal(0.0, 2.0);
  lo = VectorXd(n);
  hi = VectorXd(n);
  for (int i = 0; i < n; ++i) {
    lo(i) = rng.uniform(-2.0, 0.0);
    hi(i) = lo(i) + rng.uniform(0.5, 3.0);
  }
  p.G = MatrixXd::Zero(2 * n, n);
  p.h = VectorXd(2 * n);
  p.G.topRows(n) = MatrixXd::Identity(n, n);
  p.G.bottomRows(n) = -MatrixXd::Identity(n, n);
  p.h.head(n) = hi;
  p.h.tail(n) = -lo;
  return p;
}

double value(const qp::Problem& p, const VectorXd& x)
{
  return 0.5 * x.dot(p.P * x) + p.q.dot(x);
}

}  // namespace

TEST_CASE("unconstrained scalar minimum")
{
  // minimize (x-1)^2 = x^2 - 2x + 1, dropped constant
  qp::Problem p;
  p.P = MatrixXd::Constant(1, 1, 2.0);
  p.q = VectorXd::Constant(1, -2.0);
  p.G = MatrixXd(0, 1);
  p.h = VectorXd(0);
  auto s = qp::solve(p);
  CHECK(s.status == qp::Status::solved);
  CHECK(s.x(0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(value(p, s.x) + 1.0 == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("single active bound")
{
  // minimize x^2 s.t. x >= 2
  qp::Problem p;
  p.P = MatrixXd::Constant(1, 1, 2.0);
  p.q = VectorXd::Zero(1);
  p.G = MatrixXd::Constant(1, 1, -1.0);
  p.h = VectorXd::Constant(1, -2.0);
  auto s = qp::solve(p);
  CHECK(s.status == qp::Status::solved);
  CHECK(s.x(0) == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(value(p, s.x) == doctest::Approx(4.0).epsilon(1e-8));
}

TEST_CASE("random 3-dim box QPs match the grid oracle")
{
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    VectorXd lo, hi;
    qp::Problem p = random_box_qp(seed, 3, lo, hi);
    VectorXd expect = mgls::testing::box_qp_oracle(p.P, p.q, lo, hi);
    auto s = qp::solve(p);
    REQUIRE(s.status == qp::Status::solved);
    CHECK((s.x - expect).cwiseAbs().maxCoeff() < 1e-3);
  }
}

TEST_CASE("deterministic: repeated solves are bit-identical")
{
  VectorXd lo, hi;
  qp::Problem p = random_box_qp(42, 4, lo, hi);
  auto a = qp::solve(p);
  auto b = qp::solve(p);
  REQUIRE(a.x.size() == b.x.size());
  for (int i = 0; i < a.x.size(); ++i) CHECK(a.x(i) == b.x(i));
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("strictly convex: different warm starts converge to the same point")
{
  VectorXd lo, hi;
  qp::Problem p = random_box_qp(7, 3, lo, hi);
  auto cold = qp::solve(p);
  VectorXd x0 = hi, y0 = VectorXd::Constant(p.h.size(), 0.3);
  auto warm = qp::solve(p, {}, &x0, &y0);
  CHECK((cold.x - warm.x).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("solution value never exceeds random feasible points")
{
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    VectorXd lo, hi;
    qp::Problem p = random_box_qp(seed + 500, 3, lo, hi);
    auto s = qp::solve(p);
    REQUIRE(s.status == qp::Status::solved);
    Rng rng(seed);
    for (int t = 0; t < 5; ++t) {
      VectorXd x(3);
      for (int i = 0; i < 3; ++i) x(i) = rng.uniform(lo(i), hi(i));
      CHECK(s.value <= value(p, x) + 1e-9 * (1.0 + std::abs(s.value)));
    }
  }
}

TEST_CASE("feasibility residual within tolerance")
{
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    VectorXd lo, hi;
    qp::Problem p = random_box_qp(seed + 900, 4, lo, hi);
    auto s = qp::solve(p);
    CHECK((p.G * s.x - p.h).maxCoeff() <= 1e-8);
  }
}

TEST_CASE("contradictory constraints are reported infeasible")
{
  qp::Problem p;
  p.P = MatrixXd::Constant(1, 1, 2.0);
  p.q = VectorXd::Zero(1);
  p.G = MatrixXd(2, 1);
  p.G << -1.0, 1.0;  // x >= 1 and x <= 0
  p.h = VectorXd(2);
  p.h << -1.0, 0.0;
  auto s = qp::solve(p);
  CHECK(s.status == qp::Status::infeasible);
}

TEST_CASE("input validation")
{
  qp::Problem p;
  p.P = MatrixXd::Zero(2, 2);
  p.P << 1.0, 0.5, 0.2, 1.0;  // not symmetric
  p.q = VectorXd::Zero(2);
  p.G = MatrixXd(0, 2);
  p.h = VectorXd(0);
  CHECK_THROWS(qp::solve(p));
  p.P << 1.0, 0.0, 0.0, -1.0;  // indefinite
  CHECK_THROWS(qp::solve(p));
}
