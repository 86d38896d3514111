#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"

using namespace bayesoc;
using fixtures::vec;

TEST_CASE("grid projection stencils") {
  const auto sc = fixtures::canonical();
  const auto& p = sc.problem;
  const std::vector<double> on{2.5};
  auto st = p.project_state(on);
  REQUIRE(st.size == 1);
  CHECK(st.index[0] == 10);
  CHECK(st.weight[0] == 1.0);

  const std::vector<double> mid{2.625};
  st = p.project_state(mid);
  REQUIRE(st.size == 2);
  CHECK(st.weight[0] == doctest::Approx(0.5));
  CHECK(st.weight[1] == doctest::Approx(0.5));

  ValueTable lin(p.num_states(), 1);
  for (std::size_t s = 0; s < p.num_states(); ++s) lin(s, 0) = 3.0 * p.state(s)[0] - 1.0;
  for (double x : {0.0, 0.1, 3.33, 7.77, 9.99, 10.0}) {
    const std::vector<double> xs{x};
    const auto stx = p.project_state(xs);
    double wsum = 0.0;
    for (std::size_t i = 0; i < stx.size; ++i) {
      CHECK(stx.weight[i] >= 0.0);
      wsum += stx.weight[i];
    }
    CHECK(std::abs(wsum - 1.0) < 1e-15);
    CHECK(std::abs(interpolate(lin, stx, 0) - (3.0 * x - 1.0)) < 1e-12);
  }
}

TEST_CASE("bilinear interpolation on a 2-d grid is exact for affine functions") {
  const auto sc = fixtures::edited([](ScenarioSpec& s) {
    s.model.sigma = {{1.0, 0.0}, {0.0, 1.0}};
    s.model.theta_star = {0.5, 0.0, 0.0, 0.5, 0.0, 0.0};
    s.model.lower = std::vector<double>(6, -3.0);
    s.model.upper = std::vector<double>(6, 3.0);
    s.model.free = {true, false, false, true, false, false};
    s.problem.grid = StateGrid{{-2.0, -2.0}, {2.0, 2.0}, {9, 9}};
    s.problem.controls = {{0.0, 0.0}, {0.5, -0.5}};
    s.problem.cost = QuadraticCost{};
    s.problem.dynamics = LinearDynamics{0.8, 1.0, 1.0};
    s.problem.quadrature = QuadratureRule::gauss_hermite(5);
    s.problem.start = StartState{40, 0};
  });
  const auto& p = sc.problem;
  ValueTable lin(p.num_states(), 1);
  for (std::size_t s = 0; s < p.num_states(); ++s) lin(s, 0) = 2.0 * p.state(s)[0] - 0.5 * p.state(s)[1] + 1.0;
  Rng rng(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> x{u(rng), u(rng)};
    const auto st = p.project_state(x);
    CHECK(st.size <= 4);
    CHECK(std::abs(interpolate(lin, st, 0) - (2.0 * x[0] - 0.5 * x[1] + 1.0)) < 1e-12);
  }
}

TEST_CASE("expected_value_next on constants") {
  const auto zero = fixtures::constant_cost(0.0);
  const auto& p0 = zero.problem;
  ValueTable v0(p0.num_states(), 2, 0.0);
  CHECK(expected_value_next(p0, v0, 5, 2, zero.theta_star, 0) == 0.0);

  const auto one = fixtures::constant_cost(1.0);
  const auto& p1 = one.problem;
  ValueTable v(p1.num_states(), 2, 4.0);
  for (std::size_t s : {0u, 17u, 40u}) {
    for (std::size_t h : {0u, 1u}) {
      CHECK(std::abs(expected_value_next(p1, v, s, 3, one.theta_star, h) - (1.0 + 0.9 * 4.0)) < 1e-12);
    }
  }
}

TEST_CASE("expected_value_next is monotone in V") {
  const auto sc = fixtures::canonical();
  const auto& p = sc.problem;
  Rng rng(8);
  std::uniform_real_distribution<double> bump(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto v1 = fixtures::random_table(p.num_states(), 2, rng, 20.0);
    ValueTable v2 = v1;
    for (double& x : v2.values()) x += bump(rng);
    for (std::size_t s = 0; s < p.num_states(); s += 7) {
      for (std::size_t u = 0; u < p.num_controls(); ++u) {
        CHECK(expected_value_next(p, v1, s, u, sc.theta_star, trial % 2) <=
              expected_value_next(p, v2, s, u, sc.theta_star, trial % 2));
      }
    }
  }
}

TEST_CASE("clipping bounds") {
  const auto sc = fixtures::edited([](ScenarioSpec& s) { s.problem.cost = QuadraticCost{1.0, 0.1, 5.0, 12.0}; });
  const auto& p = sc.problem;
  Rng rng(5);
  std::normal_distribution<double> big(0.0, 30.0);
  std::vector<double> next(1);
  for (int i = 0; i < 1000; ++i) {
    const std::vector<double> x{std::abs(big(rng))}, u{big(rng)}, xi{big(rng)};
    const double c = p.stage_cost(x, u, xi);
    CHECK(std::abs(c) <= 12.0);
    p.next_state(x, u, xi, next);
    CHECK(next[0] >= 0.0);
    CHECK(next[0] <= 10.0);
  }
}

TEST_CASE("inventory cost") {
  const auto sc = fixtures::canonical();
  const auto& p = sc.problem;
  const std::vector<double> x{2.0}, u0{0.0}, u3{3.0}, xi{4.0};
  // holding on stock at hand, shortage on unmet demand, fixed order charge
  CHECK(p.stage_cost(x, u0, xi) == doctest::Approx(2.0 + 4.0 * 2.0));
  CHECK(p.stage_cost(x, u3, xi) == doctest::Approx(2.0 + 0.5));
  std::vector<double> next(1);
  p.next_state(x, u0, xi, next);
  CHECK(next[0] == 0.0);
  p.next_state(x, u3, xi, next);
  CHECK(next[0] == 1.0);
}

TEST_CASE("registry names") {
  CHECK(cost_name(InventoryCost{}) == "inventory");
  CHECK(cost_name(QuadraticCost{}) == "quadratic");
  CHECK(cost_name(ConstantCost{}) == "constant");
  CHECK(dynamics_name(LinearDynamics{}) == "linear");
  CHECK(dynamics_name(InventoryDynamics{}) == "inventory");
}

TEST_CASE("problem construction rejects a bad discount") {
  for (double g : {0.0, 1.0, 1.5, -0.2}) {
    CHECK_THROWS_AS(fixtures::edited([&](ScenarioSpec& s) { s.problem.gamma = g; }), ValidationError);
  }
}

TEST_CASE("quadrature cross-checks on the inventory backup") {
  const auto sc = fixtures::canonical();
  const auto& p = sc.problem;
  const auto vstar = value_iteration(p, TrueOperator{sc.theta_star}).values;
  const XiQuadrature gh10(QuadratureRule::gauss_hermite(10), p.model(), p.chain(), p.domain());
  const XiQuadrature gh20(QuadratureRule::gauss_hermite(20), p.model(), p.chain(), p.domain());
  const XiQuadrature mc(QuadratureRule::monte_carlo(1000000, 41), p.model(), p.chain(), p.domain());
  double worst_order = 0.0;
  for (std::size_t s : {0u, 8u, 20u, 40u}) {
    for (std::size_t u : {0u, 3u}) {
      for (std::size_t h : {0u, 1u}) {
        const double a = expected_value_next(p, vstar, s, u, sc.theta_star, h, gh10);
        const double b = expected_value_next(p, vstar, s, u, sc.theta_star, h, gh20);
        const double lat = expected_value_next(p, vstar, s, u, sc.theta_star, h);
        worst_order = std::max(worst_order, std::abs(a - b));
        // Monte Carlo standard error from the per-node integrand
        const auto nodes = mc.conditional(sc.theta_star, h);
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < nodes.size(); ++j) {
          NodeSet single{1, {nodes.node(j)[0]}, {1.0}};
          const double y = expected_value_next(p, vstar, s, u, h, single);
          m1 += y;
          m2 += y * y;
        }
        const double n = static_cast<double>(nodes.size());
        m1 /= n;
        const double se = std::sqrt((m2 / n - m1 * m1) / n);
        CHECK(std::abs(m1 - lat) <= 3.0 * se);
      }
    }
  }
  // The backup is piecewise smooth in xi (shortage kink, box clip, linear
  // interpolation of V), so Gauss-Hermite converges slowly here: about 0.13
  // between orders 10 and 20. That is why the canonical rule is the lattice.
  CHECK(worst_order > 1e-3);
}

TEST_CASE("Gauss-Hermite order 10 and 20 agree on a smooth backup") {
  // quadratic cost in xi, no clipping reachable, V smooth in the successor
  const auto sc = fixtures::edited([](ScenarioSpec& s) {
    s.problem.grid = StateGrid{{-100.0}, {100.0}, {201}};
    s.problem.controls = {{0.0}};
    s.problem.cost = QuadraticCost{0.0, 0.0, 1.0, 1e6};
    s.problem.dynamics = StaticDynamics{};
    s.problem.start = StartState{100, 0};
  });
  const auto& p = sc.problem;
  const XiQuadrature gh10(QuadratureRule::gauss_hermite(10), p.model(), p.chain(), p.domain());
  const XiQuadrature gh20(QuadratureRule::gauss_hermite(20), p.model(), p.chain(), p.domain());
  ValueTable v(p.num_states(), 2);
  for (std::size_t s = 0; s < p.num_states(); ++s) v(s, 0) = v(s, 1) = std::sin(0.01 * static_cast<double>(s));
  for (std::size_t h : {0u, 1u}) {
    const double a = expected_value_next(p, v, 100, 0, sc.theta_star, h, gh10);
    const double b = expected_value_next(p, v, 100, 0, sc.theta_star, h, gh20);
    CHECK(std::abs(a - b) < 1e-6);
    // E[xi^2] = mean^2 + 1
    const double m = sc.theta_star(static_cast<Eigen::Index>(h));
    CHECK(std::abs(b - (m * m + 1.0 + 0.9 * v(100, 0))) < 1e-9);
  }
}
