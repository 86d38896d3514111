#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "bayesoc/bellman.hpp"
#include "bayesoc/control_problem.hpp"
#include "bayesoc/posterior.hpp"
#include "bayesoc/rng.hpp"

namespace bayesoc {

// (x_1, eta_1) as grid state index and context index.
struct StartState {
  std::size_t state = 0;
  std::size_t context = 0;
};

enum class GradientMethod { monte_carlo, fixed_point, finite_difference };
std::string_view gradient_method_name(GradientMethod m);
// Accepts "monte-carlo", "fixed-point", "finite-difference".
GradientMethod parse_gradient_method(std::string_view name);

// Gradient of g(theta) = V_theta^pi(x_1, eta_1) over the flat parameter.
struct GradientResult {
  Eigen::VectorXd gradient;
  GradientMethod method = GradientMethod::fixed_point;
  double value = 0.0;  // V_theta^pi(x_1, eta_1)

  // monte_carlo
  Eigen::VectorXd standard_errors;
  double tail_bound = 0.0;
  std::size_t horizon = 0;
  std::size_t replications = 0;
  // fixed_point: residual is the largest final sup-norm step over coordinates
  double residual = 0.0;
  std::size_t iterations = 0;
  Eigen::MatrixXd field;  // (S * H) x p, row s * H + h
  // finite_difference
  double step = 0.0;
};

struct BvmVariance {
  double sigma_sq = 0.0;
  Eigen::VectorXd grad_g;
  Eigen::MatrixXd fisher;
  double fisher_min_eig = 0.0;
  std::vector<std::size_t> coords;  // flat coordinates grad_g and fisher refer to
};

// S_{theta,T} = sum_{t<=T} s(xi_t | eta_t, theta) over the first T records.
Eigen::VectorXd cumulative_score(const GaussianRegressionModel& model, const ContextChain& chain,
                                 const Eigen::VectorXd& theta, const Dataset& path, std::size_t T);

// One closed-loop path of the discretized chain: xi_t drawn from the model,
// the successor grid state drawn from the interpolation stencil.
struct Trajectory {
  std::vector<std::size_t> states;
  std::vector<std::int32_t> controls;
  std::vector<double> costs;
  Dataset noise;  // (eta_t, xi_t)
};
Trajectory simulate_trajectory(const ControlProblem& problem, const Eigen::VectorXd& theta,
                               const PolicyTable& policy, StartState start, std::size_t T,
                               Rng& rng);

// ceil(log(bias_target (1 - gamma) / c_max) / log gamma)
std::size_t default_horizon(double gamma, double c_max, double bias_target = 1e-4);
// c_max * sup_h E||s|| * sum_{t > T} t gamma^{t-1}, with E||s|| <= sqrt(tr I(theta; h)).
double truncation_bias_bound(const ControlProblem& problem, const Eigen::VectorXd& theta,
                             std::size_t T);

struct McGradientOptions {
  std::size_t horizon = 0;  // 0 selects default_horizon(bias_target)
  std::size_t replications = 10000;
  std::uint64_t seed = 0;
  double bias_target = 1e-4;
  std::size_t workers = 1;
  // Subtract gamma^{t-1} V_theta^pi(x_t, eta_t) from the reward-to-go that
  // multiplies s_t. Unbiased because s_t is mean-zero given (x_t, eta_t) and
  // the past; it only lowers the variance.
  bool value_baseline = false;
};
GradientResult mc_gradient(const ControlProblem& problem, const Eigen::VectorXd& theta,
                           const PolicyTable& policy, StartState start,
                           const McGradientOptions& options = {});

struct FixedPointOptions {
  double tolerance = 1e-10;
  std::size_t max_iter = 100000;
};
GradientResult fixed_point_gradient(const ControlProblem& problem, const Eigen::VectorXd& theta,
                                    const PolicyTable& policy, StartState start,
                                    const FixedPointOptions& options = {});

struct FiniteDifferenceOptions {
  double step = 1e-4;
  double tolerance = 1e-12;
  std::vector<std::size_t> coords;  // empty: every coordinate
};
GradientResult finite_difference_gradient(const ControlProblem& problem,
                                          const Eigen::VectorXd& theta,
                                          const PolicyTable& policy, StartState start,
                                          const FiniteDifferenceOptions& options = {});

// sigma^2 = g^T I^{-1} g via LLT. Throws RuntimeFailure("singular Fisher ...")
// when the Fisher matrix is not invertible.
BvmVariance bvm_variance(const Eigen::VectorXd& grad_g, const FisherResult& fisher,
                         std::vector<std::size_t> coords = {});
// Full pipeline on the free coordinates of the problem's domain.
BvmVariance bvm_variance(const ControlProblem& problem, const Eigen::VectorXd& theta_star,
                         const PolicyTable& policy_star, StartState start,
                         GradientMethod method, const McGradientOptions& mc = {});

struct AsymptoticGap {
  double gap = 0.0;             // sqrt(N) (V_N* - sum_k w_k V_{theta_k}^{pi*})
  double bayes_value = 0.0;     // V_N*(x_1, eta_1)
  double policy_average = 0.0;  // sum_k w_k V_{theta_k}^{pi*}(x_1, eta_1)
  std::size_t nodes_used = 0;
  double dropped_mass = 0.0;
};
struct AsymptoticGapOptions {
  double tolerance = 1e-10;
  // Components are visited by decreasing weight until this much mass is
  // covered; the kept weights are renormalized.
  double mass_tolerance = 1e-10;
  const ValueTable* warm_start = nullptr;  // e.g. V_{theta*}^{pi*}
  std::optional<double> bayes_value;       // skip the Bayesian solve when known
};
AsymptoticGap asymptotic_gap(const ControlProblem& problem, const ParameterMixture& posterior,
                             const PolicyTable& policy_star, std::size_t N, StartState start,
                             const AsymptoticGapOptions& options = {});

}  // namespace bayesoc
