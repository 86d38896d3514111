#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "bayesoc/control_problem.hpp"
#include "bayesoc/quadrature.hpp"

namespace bayesoc {

// xi ~ f(.|eta, theta): the true operator when theta = theta*.
struct TrueOperator {
  Eigen::VectorXd theta;
};
// xi ~ posterior predictive of the mixture.
struct BayesOperator {
  ParameterMixture posterior;
};
// Fixed policy, xi ~ f(.|eta, theta); no minimization.
struct PolicyOperator {
  Eigen::VectorXd theta;
  PolicyTable policy;
};
using OperatorSpec = std::variant<TrueOperator, BayesOperator, PolicyOperator>;

// Per-context node sets realizing the operator's xi expectation.
std::vector<NodeSet> operator_nodes(const ControlProblem& problem, const OperatorSpec& op);

// The discretized backup as a tabular model: for every (state, context,
// control) row, the expected stage cost and the successor distribution over
// grid states (quadrature weights times interpolation weights). With a policy
// only the policy's row is kept per cell.
class BackupModel {
 public:
  BackupModel(const ControlProblem& problem, const std::vector<NodeSet>& nodes,
              const PolicyTable* policy = nullptr);
  static BackupModel for_operator(const ControlProblem& problem, const OperatorSpec& op);

  std::size_t states() const { return states_; }
  std::size_t contexts() const { return contexts_; }
  std::size_t rows_per_cell() const { return rows_per_cell_; }
  bool is_policy() const { return policy_mode_; }
  double gamma() const { return gamma_; }

  std::size_t row(std::size_t s, std::size_t h, std::size_t k) const {
    return (s * contexts_ + h) * rows_per_cell_ + k;
  }
  double expected_cost(std::size_t r) const { return cost_[r]; }
  std::span<const std::int32_t> successors(std::size_t r) const {
    return {col_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }
  std::span<const double> probabilities(std::size_t r) const {
    return {val_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }
  // Control index used by row r.
  std::int32_t row_control(std::size_t r) const { return row_control_[r]; }

  // W[h * S + s'] = sum_h' P(h, h') V(s', h')
  void continuation(const ValueTable& v, std::vector<double>& w) const;
  // Q(row) for every row.
  void q_values(const ValueTable& v, std::vector<double>& q) const;
  // (O V)(s,h) = min_k Q, ties to the lowest control index.
  void apply(const ValueTable& v, ValueTable& out, PolicyTable* greedy = nullptr) const;
  ValueTable apply(const ValueTable& v) const;
  // Policy models only: out = offset + gamma * P_pi (continuation of v).
  void apply_affine(const ValueTable& v, std::span<const double> offset, ValueTable& out) const;

 private:
  std::size_t states_ = 0;
  std::size_t contexts_ = 0;
  std::size_t rows_per_cell_ = 0;
  bool policy_mode_ = false;
  double gamma_ = 0.0;
  Eigen::MatrixXd transition_;
  std::vector<double> cost_;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::int32_t> col_;
  std::vector<double> val_;
  std::vector<std::int32_t> row_control_;
};

ValueTable apply_true_operator(const ControlProblem& problem, const ValueTable& v,
                               const Eigen::VectorXd& theta_star);
ValueTable apply_bayes_operator(const ControlProblem& problem, const ValueTable& v,
                                const ParameterMixture& posterior);
ValueTable apply_policy_operator(const ControlProblem& problem, const ValueTable& v,
                                 const Eigen::VectorXd& theta, const PolicyTable& policy);

struct SolveOptions {
  double tolerance = 1e-10;
  std::size_t max_iter = 100000;
  const ValueTable* warm_start = nullptr;  // V0; zero table when null
  bool record_residuals = false;
};

struct SolveReport {
  std::size_t iterations = 0;
  double final_residual = 0.0;  // sup-norm of V_{k+1} - V_k
  bool converged = false;
  double elapsed_seconds = 0.0;
  bool warm_started = false;
  std::vector<double> residuals;
};

struct SolveResult {
  ValueTable values;
  SolveReport report;
};

SolveResult value_iteration(const BackupModel& model, const SolveOptions& options = {});
SolveResult value_iteration(const ControlProblem& problem, const OperatorSpec& op,
                            const SolveOptions& options = {});

// Greedy argmin over controls; `op` must be a TrueOperator or BayesOperator.
PolicyTable extract_policy(const ControlProblem& problem, const ValueTable& v,
                           const OperatorSpec& op);

double sup_norm_distance(const ValueTable& a, const ValueTable& b);

// Uniqueness surrogate for the optimal policy: gap between best and
// second-best Q-values per cell.
struct QGapReport {
  double min_gap = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> cells_below;
};
QGapReport q_gap_report(const ControlProblem& problem, const ValueTable& v,
                        const OperatorSpec& op, double threshold = 1e-6);

}  // namespace bayesoc
