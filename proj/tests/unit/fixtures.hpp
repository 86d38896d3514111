#pragma once

#include <random>

#include "bayesoc/error.hpp"
#include "bayesoc/experiments.hpp"
#include "bayesoc/rng.hpp"

namespace fixtures {

using namespace bayesoc;

inline Scenario canonical() { return canonical_scenario(); }

template <class Edit>
Scenario edited(Edit edit) {
  ScenarioSpec spec = canonical_scenario_spec();
  edit(spec);
  return build_scenario(spec);
}

inline Scenario constant_cost(double value = 1.0) {
  return edited([&](ScenarioSpec& s) { s.problem.cost = ConstantCost{value, 50.0}; });
}

inline ValueTable random_table(std::size_t states, std::size_t contexts, Rng& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  ValueTable v(states, contexts);
  for (double& x : v.values()) x = u(rng);
  return v;
}

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace fixtures
