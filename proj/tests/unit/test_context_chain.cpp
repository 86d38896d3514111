#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "bayesoc/context_chain.hpp"
#include "bayesoc/error.hpp"
#include "bayesoc/rng.hpp"

using namespace bayesoc;

namespace {

ContextChain chain2(double a, double b, double c, double d) {
  Eigen::MatrixXd p(2, 2);
  p << a, b, c, d;
  return make_chain({"low", "high"}, p);
}

}  // namespace

TEST_CASE("validate_chain reports each violation") {
  CHECK(validate_chain(chain2(0.5, 0.5, 0.5, 0.5)).empty());

  auto v = validate_chain(chain2(0.7, 0.4, 0.5, 0.5));
  REQUIRE(v.size() == 1);
  CHECK(v[0] == "row 0 sums to 1.1");

  v = validate_chain(chain2(0.5, 0.5, -0.1, 1.1));
  CHECK(std::find(v.begin(), v.end(), "negative entry at (1,0)") != v.end());

  ContextChain bad = chain2(0.5, 0.5, 0.5, 0.5);
  bad.initial_context = 2;
  CHECK(validate_chain(bad).size() == 1);
}

TEST_CASE("ergodicity test") {
  CHECK(is_irreducible_aperiodic(chain2(0.5, 0.5, 0.5, 0.5)));
  CHECK_FALSE(is_irreducible_aperiodic(chain2(1, 0, 0, 1)));
  CHECK_FALSE(is_irreducible_aperiodic(chain2(0, 1, 1, 0)));
  CHECK(is_irreducible_aperiodic(chain2(0.9, 0.1, 0.5, 0.5)));
}

TEST_CASE("stationary distribution") {
  auto nu = stationary_distribution(chain2(0.5, 0.5, 0.5, 0.5)).weights;
  CHECK(nu(0) == doctest::Approx(0.5).epsilon(1e-14));

  // balance 0.1 nu_1 = 0.5 nu_2
  const auto c = chain2(0.9, 0.1, 0.5, 0.5);
  nu = stationary_distribution(c).weights;
  CHECK(std::abs(nu(0) - 5.0 / 6.0) < 1e-12);
  CHECK(std::abs(nu(1) - 1.0 / 6.0) < 1e-12);
  const Eigen::RowVectorXd fixed = nu.transpose() * c.transition;
  CHECK((fixed.transpose() - nu).cwiseAbs().maxCoeff() < 1e-10);

  Eigen::MatrixXd one(1, 1);
  one << 1.0;
  CHECK(stationary_distribution(make_chain({"only"}, one)).weights(0) == 1.0);

  CHECK_THROWS_WITH_AS(stationary_distribution(chain2(0, 1, 1, 0)), "chain not ergodic", ValidationError);
}

TEST_CASE("stationary distribution of a larger random chain is a fixed point") {
  Rng rng(4);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  const int h = 7;
  Eigen::MatrixXd p(h, h);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < h; ++j) p(i, j) = u(rng);
    p.row(i) /= p.row(i).sum();
  }
  std::vector<std::string> names;
  for (int i = 0; i < h; ++i) names.push_back("c" + std::to_string(i));
  const auto nu = stationary_distribution(make_chain(names, p)).weights;
  CHECK(std::abs(nu.sum() - 1.0) < 1e-12);
  CHECK((p.transpose() * nu - nu).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("context paths") {
  const auto c = chain2(0.9, 0.1, 0.5, 0.5);
  CHECK(simulate_context_path(c, 1, 9) == std::vector<std::size_t>{0});

  const auto ident = chain2(1, 0, 0, 1);
  CHECK(simulate_context_path(ident, 5, 3) == std::vector<std::size_t>(5, 0));

  const std::size_t len = 100000;
  const auto path = simulate_context_path(c, len, 17);
  CHECK(path == simulate_context_path(c, len, 17));
  const double high = static_cast<double>(std::count(path.begin(), path.end(), 1u)) / len;
  CHECK(std::abs(high - 1.0 / 6.0) < 0.01);
  CHECK(std::abs(high - 1.0 / 6.0) <= 3.0 / std::sqrt(static_cast<double>(len)));

  CHECK_THROWS_AS(simulate_context_path(c, 0, 1), ValidationError);
}
