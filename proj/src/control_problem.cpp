#include "bayesoc/control_problem.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bayesoc/error.hpp"

namespace bayesoc {
namespace {

constexpr double kSnap = 1e-12;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double clip(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

std::size_t StateGrid::size() const {
  std::size_t n = 1;
  for (auto p : points) n *= p;
  return n;
}

double StateGrid::step(std::size_t axis) const {
  return (upper[axis] - lower[axis]) / static_cast<double>(points[axis] - 1);
}

std::vector<double> StateGrid::point(std::size_t index) const {
  std::vector<double> x(dim());
  for (std::size_t a = dim(); a-- > 0;) {
    const std::size_t k = index % points[a];
    index /= points[a];
    x[a] = lower[a] + static_cast<double>(k) * step(a);
  }
  return x;
}

void StateGrid::validate() const {
  if (dim() < 1 || dim() > 2) throw ValidationError("state grid must have 1 or 2 dimensions");
  if (lower.size() != dim() || upper.size() != dim()) {
    throw ValidationError("state grid bounds do not match its dimension");
  }
  for (std::size_t a = 0; a < dim(); ++a) {
    if (points[a] < 2) throw ValidationError("state grid needs at least 2 points per axis");
    if (!(lower[a] < upper[a])) throw ValidationError("state grid needs lower < upper");
  }
}

std::string_view cost_name(const CostSpec& cost) {
  return std::visit(Overloaded{[](const InventoryCost&) { return std::string_view("inventory"); },
                               [](const QuadraticCost&) { return std::string_view("quadratic"); },
                               [](const ConstantCost&) { return std::string_view("constant"); },
                               [](const NoiseCost&) { return std::string_view("noise"); }},
                    cost);
}

std::string_view dynamics_name(const DynamicsSpec& dynamics) {
  return std::visit(
      Overloaded{[](const InventoryDynamics&) { return std::string_view("inventory"); },
                 [](const LinearDynamics&) { return std::string_view("linear"); },
                 [](const StaticDynamics&) { return std::string_view("static"); }},
      dynamics);
}

double cost_bound(const CostSpec& cost) {
  return std::visit([](const auto& c) { return c.c_max; }, cost);
}

ControlProblem::ControlProblem(StateGrid grid, std::vector<Eigen::VectorXd> controls,
                               double gamma, CostSpec cost, DynamicsSpec dynamics,
                               ContextChain chain, GaussianRegressionModel model,
                               ParameterDomain domain, QuadratureRule rule)
    : grid_(std::move(grid)),
      controls_(std::move(controls)),
      gamma_(gamma),
      cost_(cost),
      dynamics_(dynamics),
      chain_(std::move(chain)),
      model_(std::move(model)),
      domain_(std::move(domain)),
      quadrature_(rule, model_, chain_, domain_) {
  grid_.validate();
  if (!(gamma_ > 0.0 && gamma_ < 1.0)) throw ValidationError("gamma must lie in (0,1)");
  if (!(cost_bound(cost_) > 0.0)) throw ValidationError("c_max must be positive");
  if (controls_.empty()) throw ValidationError("control list is empty");
  control_dim_ = static_cast<std::size_t>(controls_.front().size());
  for (const auto& u : controls_) {
    if (static_cast<std::size_t>(u.size()) != control_dim_) {
      throw ValidationError("controls must share one dimension");
    }
    control_data_.insert(control_data_.end(), u.data(), u.data() + u.size());
  }
  if (model_.eta_dim() != chain_.embedding_dim()) {
    throw ValidationError("model context dimension does not match chain embeddings");
  }
  domain_.validate(model_.parameter_dim());
  const std::size_t d = model_.xi_dim();
  std::visit(Overloaded{[&](const InventoryDynamics&) {
                          if (control_dim_ < 1) throw ValidationError("inventory dynamics need a control");
                        },
                        [&](const LinearDynamics&) {
                          if (grid_.dim() != d || control_dim_ != d) {
                            throw ValidationError(
                                "linear dynamics need state, control and xi of equal dimension");
                          }
                        },
                        [](const StaticDynamics&) {}},
             dynamics_);
  state_data_.reserve(grid_.size() * grid_.dim());
  for (std::size_t s = 0; s < grid_.size(); ++s) {
    const auto x = grid_.point(s);
    state_data_.insert(state_data_.end(), x.begin(), x.end());
  }
}

double ControlProblem::stage_cost(std::span<const double> x, std::span<const double> u,
                                  std::span<const double> xi) const {
  const double raw = std::visit(
      Overloaded{[&](const InventoryCost& c) {
                   const double shortfall = std::max(xi[0] - x[0] - u[0], 0.0);
                   return c.holding * x[0] + c.shortage * shortfall + (u[0] > 0.0 ? c.order : 0.0);
                 },
                 [&](const QuadraticCost& c) {
                   double v = 0.0;
                   for (double xv : x) v += c.state_weight * xv * xv;
                   for (double uv : u) v += c.control_weight * uv * uv;
                   for (double z : xi) v += c.noise_weight * z * z;
                   return v;
                 },
                 [](const ConstantCost& c) { return c.value; },
                 [&](const NoiseCost&) { return xi[0]; }},
      cost_);
  const double cm = c_max();
  return clip(raw, -cm, cm);
}

void ControlProblem::next_state(std::span<const double> x, std::span<const double> u,
                                std::span<const double> xi, std::span<double> out) const {
  std::visit(Overloaded{[&](const InventoryDynamics&) {
                          out[0] = x[0] + u[0] - xi[0];
                          for (std::size_t a = 1; a < x.size(); ++a) out[a] = x[a];
                        },
                        [&](const LinearDynamics& dyn) {
                          for (std::size_t a = 0; a < x.size(); ++a) {
                            out[a] = dyn.state_coeff * x[a] + dyn.control_coeff * u[a] +
                                     dyn.noise_coeff * xi[a];
                          }
                        },
                        [&](const StaticDynamics&) {
                          for (std::size_t a = 0; a < x.size(); ++a) out[a] = x[a];
                        }},
             dynamics_);
  for (std::size_t a = 0; a < out.size(); ++a) out[a] = clip(out[a], grid_.lower[a], grid_.upper[a]);
}

Stencil ControlProblem::project_state(std::span<const double> x) const {
  const std::size_t n = grid_.dim();
  std::array<std::size_t, 2> base{};
  std::array<double, 2> frac{};
  for (std::size_t a = 0; a < n; ++a) {
    const double h = grid_.step(a);
    const double pos = (clip(x[a], grid_.lower[a], grid_.upper[a]) - grid_.lower[a]) / h;
    auto k = static_cast<std::size_t>(std::floor(pos));
    if (k >= grid_.points[a] - 1) k = grid_.points[a] - 2;
    double f = pos - static_cast<double>(k);
    if (f < kSnap) f = 0.0;
    if (f > 1.0 - kSnap) {
      f = 0.0;
      ++k;
    }
    base[a] = k;
    frac[a] = f;
  }
  Stencil st;
  const std::size_t corners = std::size_t{1} << n;
  for (std::size_t c = 0; c < corners; ++c) {
    double w = 1.0;
    std::size_t index = 0;
    for (std::size_t a = 0; a < n; ++a) {
      const bool up = (c >> (n - 1 - a)) & 1U;
      w *= up ? frac[a] : 1.0 - frac[a];
      index = index * grid_.points[a] + base[a] + (up ? 1 : 0);
    }
    if (w > 0.0) {
      st.index[st.size] = static_cast<std::int32_t>(index);
      st.weight[st.size] = w;
      ++st.size;
    }
  }
  return st;
}

double ValueTable::sup_norm() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

double interpolate(const ValueTable& v, const Stencil& st, std::size_t context) {
  double acc = 0.0;
  for (std::size_t i = 0; i < st.size; ++i) {
    acc += st.weight[i] * v(static_cast<std::size_t>(st.index[i]), context);
  }
  return acc;
}

double expected_value_next(const ControlProblem& problem, const ValueTable& v,
                           std::size_t state, std::size_t control, std::size_t context,
                           const NodeSet& nodes) {
  const auto x = problem.state(state);
  const auto u = problem.control(control);
  const auto& trans = problem.chain().transition;
  std::vector<double> next(problem.state_dim());
  double acc = 0.0;
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    const auto xi = nodes.node(j);
    problem.next_state(x, u, xi, next);
    const Stencil st = problem.project_state(next);
    double cont = 0.0;
    for (std::size_t h2 = 0; h2 < problem.num_contexts(); ++h2) {
      const double p = trans(static_cast<Eigen::Index>(context), static_cast<Eigen::Index>(h2));
      if (p != 0.0) cont += p * interpolate(v, st, h2);
    }
    acc += nodes.weights[j] * (problem.stage_cost(x, u, xi) + problem.gamma() * cont);
  }
  return acc;
}

double expected_value_next(const ControlProblem& problem, const ValueTable& v,
                           std::size_t state, std::size_t control, const Eigen::VectorXd& theta,
                           std::size_t context, const XiQuadrature& quadrature) {
  return expected_value_next(problem, v, state, control, context,
                             quadrature.conditional(theta, context));
}

double expected_value_next(const ControlProblem& problem, const ValueTable& v,
                           std::size_t state, std::size_t control, const Eigen::VectorXd& theta,
                           std::size_t context) {
  return expected_value_next(problem, v, state, control, theta, context, problem.quadrature());
}

}  // namespace bayesoc
