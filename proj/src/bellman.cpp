#include "bayesoc/bellman.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "bayesoc/error.hpp"
#include "bayesoc/simd.hpp"

namespace bayesoc {

std::vector<NodeSet> operator_nodes(const ControlProblem& problem, const OperatorSpec& op) {
  std::vector<NodeSet> nodes;
  nodes.reserve(problem.num_contexts());
  for (std::size_t h = 0; h < problem.num_contexts(); ++h) {
    nodes.push_back(std::visit(
        [&](const auto& o) -> NodeSet {
          using T = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<T, BayesOperator>) {
            return problem.quadrature().predictive(o.posterior, h);
          } else {
            return problem.quadrature().conditional(o.theta, h);
          }
        },
        op));
  }
  return nodes;
}

BackupModel::BackupModel(const ControlProblem& problem, const std::vector<NodeSet>& nodes,
                         const PolicyTable* policy)
    : states_(problem.num_states()),
      contexts_(problem.num_contexts()),
      rows_per_cell_(policy != nullptr ? 1 : problem.num_controls()),
      policy_mode_(policy != nullptr),
      gamma_(problem.gamma()),
      transition_(problem.chain().transition) {
  if (nodes.size() != contexts_) throw ValidationError("need one node set per context");
  if (policy != nullptr && (policy->states() != states_ || policy->contexts() != contexts_)) {
    throw ValidationError("policy table shape does not match the problem");
  }
  const std::size_t rows = states_ * contexts_ * rows_per_cell_;
  cost_.resize(rows);
  row_control_.resize(rows);
  row_ptr_.assign(rows + 1, 0);
  col_.reserve(rows * 8);
  val_.reserve(rows * 8);

  std::vector<double> scratch(states_, 0.0);
  std::vector<std::size_t> mark(states_, std::numeric_limits<std::size_t>::max());
  std::vector<std::int32_t> touched;
  std::vector<double> next(problem.state_dim());

  for (std::size_t s = 0; s < states_; ++s) {
    const auto x = problem.state(s);
    for (std::size_t h = 0; h < contexts_; ++h) {
      const NodeSet& ns = nodes[h];
      for (std::size_t k = 0; k < rows_per_cell_; ++k) {
        const std::size_t r = row(s, h, k);
        const std::int32_t u_index =
            policy_mode_ ? (*policy)(s, h) : static_cast<std::int32_t>(k);
        if (u_index < 0 || static_cast<std::size_t>(u_index) >= problem.num_controls()) {
          throw ValidationError("policy entry is not a valid control index");
        }
        row_control_[r] = u_index;
        const auto u = problem.control(static_cast<std::size_t>(u_index));
        touched.clear();
        double c = 0.0;
        for (std::size_t j = 0; j < ns.size(); ++j) {
          const double q = ns.weights[j];
          const auto xi = ns.node(j);
          c += q * problem.stage_cost(x, u, xi);
          problem.next_state(x, u, xi, next);
          const Stencil st = problem.project_state(next);
          for (std::size_t i = 0; i < st.size; ++i) {
            const auto idx = static_cast<std::size_t>(st.index[i]);
            if (mark[idx] != r) {
              mark[idx] = r;
              scratch[idx] = 0.0;
              touched.push_back(st.index[i]);
            }
            scratch[idx] += q * st.weight[i];
          }
        }
        cost_[r] = c;
        std::sort(touched.begin(), touched.end());
        for (auto idx : touched) {
          col_.push_back(idx);
          val_.push_back(scratch[static_cast<std::size_t>(idx)]);
        }
        row_ptr_[r + 1] = col_.size();
      }
    }
  }
}

BackupModel BackupModel::for_operator(const ControlProblem& problem, const OperatorSpec& op) {
  const auto nodes = operator_nodes(problem, op);
  if (const auto* pol = std::get_if<PolicyOperator>(&op)) {
    return BackupModel(problem, nodes, &pol->policy);
  }
  return BackupModel(problem, nodes, nullptr);
}

void BackupModel::continuation(const ValueTable& v, std::vector<double>& w) const {
  w.assign(contexts_ * states_, 0.0);
  for (std::size_t h = 0; h < contexts_; ++h) {
    double* wh = w.data() + h * states_;
    for (std::size_t h2 = 0; h2 < contexts_; ++h2) {
      const double p = transition_(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(h2));
      if (p == 0.0) continue;
      for (std::size_t s = 0; s < states_; ++s) wh[s] += p * v(s, h2);
    }
  }
}

void BackupModel::q_values(const ValueTable& v, std::vector<double>& q) const {
  if (v.states() != states_ || v.contexts() != contexts_) {
    throw ValidationError("value table shape does not match the backup model");
  }
  std::vector<double> w;
  continuation(v, w);
  q.resize(cost_.size());
  for (std::size_t s = 0; s < states_; ++s) {
    for (std::size_t h = 0; h < contexts_; ++h) {
      const double* wh = w.data() + h * states_;
      for (std::size_t k = 0; k < rows_per_cell_; ++k) {
        const std::size_t r = row(s, h, k);
        q[r] = cost_[r] + gamma_ * simd::gather_dot(successors(r), probabilities(r), wh);
      }
    }
  }
}

void BackupModel::apply(const ValueTable& v, ValueTable& out, PolicyTable* greedy) const {
  std::vector<double> q;
  q_values(v, q);
  if (!out.same_shape(v)) out = ValueTable(states_, contexts_);
  if (greedy != nullptr && (greedy->states() != states_ || greedy->contexts() != contexts_)) {
    *greedy = PolicyTable(states_, contexts_);
  }
  for (std::size_t s = 0; s < states_; ++s) {
    for (std::size_t h = 0; h < contexts_; ++h) {
      std::size_t best = 0;
      double best_q = q[row(s, h, 0)];
      for (std::size_t k = 1; k < rows_per_cell_; ++k) {
        const double qk = q[row(s, h, k)];
        if (qk < best_q) {
          best_q = qk;
          best = k;
        }
      }
      out(s, h) = best_q;
      if (greedy != nullptr) (*greedy)(s, h) = row_control_[row(s, h, best)];
    }
  }
}

ValueTable BackupModel::apply(const ValueTable& v) const {
  ValueTable out(states_, contexts_);
  apply(v, out);
  return out;
}

void BackupModel::apply_affine(const ValueTable& v, std::span<const double> offset,
                               ValueTable& out) const {
  if (!policy_mode_) throw ValidationError("apply_affine needs a policy backup model");
  if (offset.size() != states_ * contexts_) throw ValidationError("offset has the wrong size");
  std::vector<double> w;
  continuation(v, w);
  if (!out.same_shape(v)) out = ValueTable(states_, contexts_);
  for (std::size_t s = 0; s < states_; ++s) {
    for (std::size_t h = 0; h < contexts_; ++h) {
      const std::size_t r = row(s, h, 0);
      out(s, h) = offset[s * contexts_ + h] +
                  gamma_ * simd::gather_dot(successors(r), probabilities(r), w.data() + h * states_);
    }
  }
}

ValueTable apply_true_operator(const ControlProblem& problem, const ValueTable& v,
                               const Eigen::VectorXd& theta_star) {
  return BackupModel::for_operator(problem, TrueOperator{theta_star}).apply(v);
}

ValueTable apply_bayes_operator(const ControlProblem& problem, const ValueTable& v,
                                const ParameterMixture& posterior) {
  return BackupModel::for_operator(problem, BayesOperator{posterior}).apply(v);
}

ValueTable apply_policy_operator(const ControlProblem& problem, const ValueTable& v,
                                 const Eigen::VectorXd& theta, const PolicyTable& policy) {
  return BackupModel::for_operator(problem, PolicyOperator{theta, policy}).apply(v);
}

SolveResult value_iteration(const BackupModel& model, const SolveOptions& options) {
  if (!(options.tolerance > 0.0)) throw ValidationError("tolerance must be positive");
  const auto t0 = std::chrono::steady_clock::now();
  SolveResult result;
  ValueTable current = options.warm_start != nullptr
                           ? *options.warm_start
                           : ValueTable(model.states(), model.contexts(), 0.0);
  if (current.states() != model.states() || current.contexts() != model.contexts()) {
    throw ValidationError("warm start table has the wrong shape");
  }
  result.report.warm_started = options.warm_start != nullptr;
  ValueTable next(model.states(), model.contexts());
  for (std::size_t it = 1; it <= options.max_iter; ++it) {
    model.apply(current, next);
    const double resid = sup_norm_distance(next, current);
    std::swap(current, next);
    result.report.iterations = it;
    result.report.final_residual = resid;
    if (options.record_residuals) result.report.residuals.push_back(resid);
    if (!std::isfinite(resid)) break;
    if (resid <= options.tolerance) {
      result.report.converged = true;
      break;
    }
  }
  result.values = std::move(current);
  result.report.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

SolveResult value_iteration(const ControlProblem& problem, const OperatorSpec& op,
                            const SolveOptions& options) {
  return value_iteration(BackupModel::for_operator(problem, op), options);
}

PolicyTable extract_policy(const ControlProblem& problem, const ValueTable& v,
                           const OperatorSpec& op) {
  if (std::holds_alternative<PolicyOperator>(op)) {
    throw ValidationError("extract_policy needs a true or Bayesian operator");
  }
  const BackupModel model = BackupModel::for_operator(problem, op);
  ValueTable out(v.states(), v.contexts());
  PolicyTable policy(v.states(), v.contexts());
  model.apply(v, out, &policy);
  return policy;
}

double sup_norm_distance(const ValueTable& a, const ValueTable& b) {
  if (!a.same_shape(b)) throw ValidationError("value tables have different shapes");
  double m = 0.0;
  const auto& x = a.values();
  const auto& y = b.values();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

QGapReport q_gap_report(const ControlProblem& problem, const ValueTable& v,
                        const OperatorSpec& op, double threshold) {
  if (std::holds_alternative<PolicyOperator>(op)) {
    throw ValidationError("q_gap_report needs a true or Bayesian operator");
  }
  const BackupModel model = BackupModel::for_operator(problem, op);
  std::vector<double> q;
  model.q_values(v, q);
  QGapReport rep;
  rep.min_gap = std::numeric_limits<double>::infinity();
  if (model.rows_per_cell() < 2) return rep;
  for (std::size_t s = 0; s < model.states(); ++s) {
    for (std::size_t h = 0; h < model.contexts(); ++h) {
      double best = std::numeric_limits<double>::infinity();
      double second = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < model.rows_per_cell(); ++k) {
        const double qk = q[model.row(s, h, k)];
        if (qk < best) {
          second = best;
          best = qk;
        } else if (qk < second) {
          second = qk;
        }
      }
      const double gap = second - best;
      rep.min_gap = std::min(rep.min_gap, gap);
      if (gap < threshold) rep.cells_below.emplace_back(s, h);
    }
  }
  return rep;
}

}  // namespace bayesoc
