#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "bayesoc/context_chain.hpp"
#include "bayesoc/density_model.hpp"
#include "bayesoc/quadrature.hpp"

namespace bayesoc {

// Uniform tensor grid over a box in R^n, n in {1, 2}. State index is row-major
// over the coordinates (last coordinate fastest).
struct StateGrid {
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<std::size_t> points;

  std::size_t dim() const { return points.size(); }
  std::size_t size() const;
  double step(std::size_t axis) const;
  std::vector<double> point(std::size_t index) const;
  void validate() const;
};

// Multilinear interpolation stencil: convex weights over at most 2^n nodes.
struct Stencil {
  std::array<std::int32_t, 4> index{};
  std::array<double, 4> weight{};
  std::size_t size = 0;
};

// Stage costs. Every cost is clipped to [-c_max, c_max].
struct InventoryCost {
  double holding = 1.0;   // per unit of stock on hand
  double shortage = 4.0;  // per unit of unmet demand max(xi - x - u, 0)
  double order = 0.5;     // fixed charge when u > 0
  double c_max = 50.0;
};
// state_weight |x|^2 + control_weight |u|^2 + noise_weight |xi|^2
struct QuadraticCost {
  double state_weight = 1.0;
  double control_weight = 0.1;
  double noise_weight = 0.0;
  double c_max = 50.0;
};
struct ConstantCost {
  double value = 1.0;
  double c_max = 50.0;
};
// c = clip(xi_1); independent of state and control.
struct NoiseCost {
  double c_max = 50.0;
};
using CostSpec = std::variant<InventoryCost, QuadraticCost, ConstantCost, NoiseCost>;

// x' = x + u - xi (first coordinates), clipped to the state box.
struct InventoryDynamics {};
// x' = a x + b u + c xi elementwise (n = m = d), clipped to the state box.
struct LinearDynamics {
  double state_coeff = 1.0;
  double control_coeff = 1.0;
  double noise_coeff = 1.0;
};
// x' = x
struct StaticDynamics {};
using DynamicsSpec = std::variant<InventoryDynamics, LinearDynamics, StaticDynamics>;

std::string_view cost_name(const CostSpec& cost);
std::string_view dynamics_name(const DynamicsSpec& dynamics);
double cost_bound(const CostSpec& cost);

// Discretized discounted control problem with Markov-modulated randomness.
class ControlProblem {
 public:
  ControlProblem(StateGrid grid, std::vector<Eigen::VectorXd> controls, double gamma,
                 CostSpec cost, DynamicsSpec dynamics, ContextChain chain,
                 GaussianRegressionModel model, ParameterDomain domain, QuadratureRule rule);

  const StateGrid& grid() const { return grid_; }
  std::size_t num_states() const { return grid_.size(); }
  std::size_t num_contexts() const { return chain_.size(); }
  std::size_t num_controls() const { return controls_.size(); }
  std::size_t state_dim() const { return grid_.dim(); }
  std::size_t control_dim() const { return control_dim_; }
  std::span<const double> control(std::size_t u) const {
    return {control_data_.data() + u * control_dim_, control_dim_};
  }
  std::span<const double> state(std::size_t s) const {
    return {state_data_.data() + s * grid_.dim(), grid_.dim()};
  }
  double gamma() const { return gamma_; }
  double c_max() const { return cost_bound(cost_); }
  const CostSpec& cost() const { return cost_; }
  const DynamicsSpec& dynamics() const { return dynamics_; }
  const ContextChain& chain() const { return chain_; }
  const GaussianRegressionModel& model() const { return model_; }
  const ParameterDomain& domain() const { return domain_; }
  const XiQuadrature& quadrature() const { return quadrature_; }
  const std::vector<Eigen::VectorXd>& controls() const { return controls_; }

  double stage_cost(std::span<const double> x, std::span<const double> u,
                    std::span<const double> xi) const;
  // Successor state, clipped to the grid box.
  void next_state(std::span<const double> x, std::span<const double> u,
                  std::span<const double> xi, std::span<double> out) const;
  Stencil project_state(std::span<const double> x) const;

 private:
  StateGrid grid_;
  std::vector<Eigen::VectorXd> controls_;
  std::size_t control_dim_ = 0;
  std::vector<double> control_data_;
  std::vector<double> state_data_;
  double gamma_;
  CostSpec cost_;
  DynamicsSpec dynamics_;
  ContextChain chain_;
  GaussianRegressionModel model_;
  ParameterDomain domain_;
  XiQuadrature quadrature_;
};

// Tabulated V over (state, context); storage is state-major.
class ValueTable {
 public:
  ValueTable() = default;
  ValueTable(std::size_t states, std::size_t contexts, double fill = 0.0)
      : states_(states), contexts_(contexts), values_(states * contexts, fill) {}

  double& operator()(std::size_t s, std::size_t h) { return values_[s * contexts_ + h]; }
  double operator()(std::size_t s, std::size_t h) const { return values_[s * contexts_ + h]; }
  std::size_t states() const { return states_; }
  std::size_t contexts() const { return contexts_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  bool same_shape(const ValueTable& o) const {
    return states_ == o.states_ && contexts_ == o.contexts_;
  }
  double sup_norm() const;

 private:
  std::size_t states_ = 0;
  std::size_t contexts_ = 0;
  std::vector<double> values_;
};

// Control index per (state, context).
class PolicyTable {
 public:
  PolicyTable() = default;
  PolicyTable(std::size_t states, std::size_t contexts, std::int32_t fill = 0)
      : states_(states), contexts_(contexts), actions_(states * contexts, fill) {}

  std::int32_t& operator()(std::size_t s, std::size_t h) { return actions_[s * contexts_ + h]; }
  std::int32_t operator()(std::size_t s, std::size_t h) const {
    return actions_[s * contexts_ + h];
  }
  std::size_t states() const { return states_; }
  std::size_t contexts() const { return contexts_; }
  const std::vector<std::int32_t>& actions() const { return actions_; }
  bool operator==(const PolicyTable&) const = default;

 private:
  std::size_t states_ = 0;
  std::size_t contexts_ = 0;
  std::vector<std::int32_t> actions_;
};

// Evaluates a value table through a stencil.
double interpolate(const ValueTable& v, const Stencil& st, std::size_t context);

// sum_j q_j [ c(x,u,xi_j) + gamma sum_h' P(h,h') V(project(F(x,u,xi_j)), h') ]
double expected_value_next(const ControlProblem& problem, const ValueTable& v,
                           std::size_t state, std::size_t control, const Eigen::VectorXd& theta,
                           std::size_t context);
double expected_value_next(const ControlProblem& problem, const ValueTable& v,
                           std::size_t state, std::size_t control, const Eigen::VectorXd& theta,
                           std::size_t context, const XiQuadrature& quadrature);
// Same backup against an explicit node set for the context.
double expected_value_next(const ControlProblem& problem, const ValueTable& v,
                           std::size_t state, std::size_t control, std::size_t context,
                           const NodeSet& nodes);

}  // namespace bayesoc
