#include "bayesoc/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bayesoc/error.hpp"
#include "bayesoc/parallel.hpp"

namespace bayesoc {

std::string_view gradient_method_name(GradientMethod m) {
  switch (m) {
    case GradientMethod::monte_carlo: return "monte-carlo";
    case GradientMethod::fixed_point: return "fixed-point";
    case GradientMethod::finite_difference: return "finite-difference";
  }
  return "unknown";
}

GradientMethod parse_gradient_method(std::string_view name) {
  if (name == "monte-carlo") return GradientMethod::monte_carlo;
  if (name == "fixed-point") return GradientMethod::fixed_point;
  if (name == "finite-difference") return GradientMethod::finite_difference;
  throw ValidationError("unknown gradient method '" + std::string(name) +
                        "' (expected monte-carlo, fixed-point or finite-difference)");
}

Eigen::VectorXd cumulative_score(const GaussianRegressionModel& model, const ContextChain& chain,
                                 const Eigen::VectorXd& theta, const Dataset& path, std::size_t T) {
  if (path.size() < T) throw ValidationError("path shorter than T");
  Eigen::VectorXd s = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.parameter_dim()));
  for (std::size_t t = 0; t < T; ++t) {
    s += model.score(theta, path.xi_vector(t), chain.embeddings.at(path.contexts[t]));
  }
  return s;
}

namespace {

void check_start(const ControlProblem& problem, StartState start) {
  if (start.state >= problem.num_states() || start.context >= problem.num_contexts()) {
    throw ValidationError("start state outside the problem");
  }
}

void check_policy(const ControlProblem& problem, const PolicyTable& policy) {
  if (policy.states() != problem.num_states() || policy.contexts() != problem.num_contexts()) {
    throw ValidationError("policy table shape does not match the problem");
  }
}

std::size_t draw_index(const double* weights, std::size_t n, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return n - 1;
}

}  // namespace

Trajectory simulate_trajectory(const ControlProblem& problem, const Eigen::VectorXd& theta,
                               const PolicyTable& policy, StartState start, std::size_t T,
                               Rng& rng) {
  check_start(problem, start);
  check_policy(problem, policy);
  const auto& model = problem.model();
  const auto& chain = problem.chain();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Trajectory tr;
  tr.noise.dim = model.xi_dim();
  tr.states.reserve(T);
  tr.controls.reserve(T);
  tr.costs.reserve(T);
  std::size_t s = start.state;
  std::size_t h = start.context;
  Eigen::VectorXd xi(static_cast<Eigen::Index>(model.xi_dim()));
  std::vector<double> next(problem.state_dim());
  for (std::size_t t = 0; t < T; ++t) {
    const std::int32_t u = policy(s, h);
    model.sample_into(theta, chain.embeddings[h], rng, xi);
    const std::span<const double> xs(xi.data(), static_cast<std::size_t>(xi.size()));
    tr.states.push_back(s);
    tr.controls.push_back(u);
    tr.costs.push_back(problem.stage_cost(problem.state(s), problem.control(static_cast<std::size_t>(u)), xs));
    tr.noise.push_back(h, xs);
    problem.next_state(problem.state(s), problem.control(static_cast<std::size_t>(u)), xs, next);
    const Stencil st = problem.project_state(next);
    s = static_cast<std::size_t>(st.index[draw_index(st.weight.data(), st.size, unif(rng))]);
    const Eigen::VectorXd row = chain.transition.row(static_cast<Eigen::Index>(h)).transpose();
    h = draw_index(row.data(), chain.size(), unif(rng));
  }
  return tr;
}

std::size_t default_horizon(double gamma, double c_max, double bias_target) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("gamma must lie in (0,1)");
  if (!(bias_target > 0.0) || !(c_max > 0.0)) throw ValidationError("bias target and c_max must be positive");
  const double t = std::ceil(std::log(bias_target * (1.0 - gamma) / c_max) / std::log(gamma));
  return static_cast<std::size_t>(std::max(1.0, t));
}

double truncation_bias_bound(const ControlProblem& problem, const Eigen::VectorXd& theta,
                             std::size_t T) {
  double es = 0.0;
  for (const auto& eta : problem.chain().embeddings) {
    es = std::max(es, std::sqrt(problem.model().fisher_per_context(theta, eta).trace()));
  }
  const double g = problem.gamma();
  const auto tt = static_cast<double>(T);
  // sum_{t > T} t g^{t-1} = ((T+1) g^T - T g^{T+1}) / (1-g)^2
  const double tail = ((tt + 1.0) * std::pow(g, tt) - tt * std::pow(g, tt + 1.0)) / ((1.0 - g) * (1.0 - g));
  return problem.c_max() * es * tail;
}

GradientResult mc_gradient(const ControlProblem& problem, const Eigen::VectorXd& theta,
                           const PolicyTable& policy, StartState start,
                           const McGradientOptions& options) {
  check_start(problem, start);
  check_policy(problem, policy);
  if (options.replications < 2) throw ValidationError("mc_gradient needs at least 2 replications");
  const std::size_t T = options.horizon > 0
                            ? options.horizon
                            : default_horizon(problem.gamma(), problem.c_max(), options.bias_target);
  const auto p = static_cast<Eigen::Index>(problem.model().parameter_dim());
  const std::size_t M = options.replications;
  std::vector<Eigen::VectorXd> per_path(M);
  std::vector<double> per_value(M);
  ValueTable baseline;
  if (options.value_baseline) {
    SolveResult vs = value_iteration(problem, PolicyOperator{theta, policy});
    if (!vs.report.converged) throw RuntimeFailure("not converged: policy evaluation");
    baseline = std::move(vs.values);
  }
  parallel_for(M, options.workers, [&](std::size_t m) {
    Rng rng(derive_seed(options.seed, m, 0));
    const Trajectory tr = simulate_trajectory(problem, theta, policy, start, T, rng);
    // sum_t gamma^{t-1} c_t S_t = sum_t s_t * sum_{t' >= t} gamma^{t'-1} c_t'
    std::vector<double> togo(T + 1, 0.0);
    std::vector<double> disc(T, 1.0);
    for (std::size_t t = 1; t < T; ++t) disc[t] = disc[t - 1] * problem.gamma();
    for (std::size_t t = T; t-- > 0;) togo[t] = togo[t + 1] + disc[t] * tr.costs[t];
    Eigen::VectorXd G = Eigen::VectorXd::Zero(p);
    for (std::size_t t = 0; t < T; ++t) {
      double weight = togo[t];
      if (options.value_baseline) {
        weight -= disc[t] * baseline(tr.states[t], tr.noise.contexts[t]);
      }
      G += weight * problem.model().score(theta, tr.noise.xi_vector(t),
                                          problem.chain().embeddings[tr.noise.contexts[t]]);
    }
    per_path[m] = std::move(G);
    per_value[m] = togo[0];
  });
  GradientResult r;
  r.method = GradientMethod::monte_carlo;
  r.horizon = T;
  r.replications = M;
  r.gradient = Eigen::VectorXd::Zero(p);
  for (const auto& g : per_path) r.gradient += g;
  r.gradient /= static_cast<double>(M);
  Eigen::VectorXd var = Eigen::VectorXd::Zero(p);
  for (const auto& g : per_path) var += (g - r.gradient).array().square().matrix();
  var /= static_cast<double>(M - 1);
  r.standard_errors = (var / static_cast<double>(M)).array().sqrt().matrix();
  r.value = std::accumulate(per_value.begin(), per_value.end(), 0.0) / static_cast<double>(M);
  r.tail_bound = truncation_bias_bound(problem, theta, T);
  return r;
}

GradientResult fixed_point_gradient(const ControlProblem& problem, const Eigen::VectorXd& theta,
                                    const PolicyTable& policy, StartState start,
                                    const FixedPointOptions& options) {
  check_start(problem, start);
  check_policy(problem, policy);
  const auto& model = problem.model();
  const auto& chain = problem.chain();
  const std::size_t S = problem.num_states();
  const std::size_t H = problem.num_contexts();
  const std::size_t p = model.parameter_dim();

  const PolicyOperator op{theta, policy};
  const auto nodes = operator_nodes(problem, op);
  const BackupModel backup(problem, nodes, &policy);
  SolveOptions so;
  so.tolerance = options.tolerance;
  so.max_iter = options.max_iter;
  const SolveResult vs = value_iteration(backup, so);
  if (!vs.report.converged) throw RuntimeFailure("not converged: policy evaluation");
  std::vector<double> w;
  backup.continuation(vs.values, w);

  // Centered per-node scores: with normalized quadrature weights q_j(theta),
  // d q_j / d theta = q_j (s_j - sum_i q_i s_i).
  std::vector<Eigen::MatrixXd> scores(H);
  for (std::size_t h = 0; h < H; ++h) {
    const NodeSet& ns = nodes[h];
    Eigen::MatrixXd sc(static_cast<Eigen::Index>(ns.size()), static_cast<Eigen::Index>(p));
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    for (std::size_t j = 0; j < ns.size(); ++j) {
      const auto xi = ns.node(j);
      const Eigen::VectorXd s = model.score(
          theta, Eigen::Map<const Eigen::VectorXd>(xi.data(), static_cast<Eigen::Index>(xi.size())),
          chain.embeddings[h]);
      sc.row(static_cast<Eigen::Index>(j)) = s.transpose();
      mean += ns.weights[j] * s;
    }
    sc.rowwise() -= mean.transpose();
    scores[h] = std::move(sc);
  }

  // Inhomogeneous term b(s,h) = sum_j q_j s_j [c_j + gamma W_h(F_j)].
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(S * H), static_cast<Eigen::Index>(p));
  std::vector<double> next(problem.state_dim());
  for (std::size_t s = 0; s < S; ++s) {
    const auto x = problem.state(s);
    for (std::size_t h = 0; h < H; ++h) {
      const auto u = problem.control(static_cast<std::size_t>(policy(s, h)));
      const NodeSet& ns = nodes[h];
      const double* wh = w.data() + h * S;
      for (std::size_t j = 0; j < ns.size(); ++j) {
        const auto xi = ns.node(j);
        problem.next_state(x, u, xi, next);
        const Stencil st = problem.project_state(next);
        double cont = 0.0;
        for (std::size_t i = 0; i < st.size; ++i) cont += st.weight[i] * wh[st.index[i]];
        const double y = problem.stage_cost(x, u, xi) + problem.gamma() * cont;
        b.row(static_cast<Eigen::Index>(s * H + h)) +=
            (ns.weights[j] * y) * scores[h].row(static_cast<Eigen::Index>(j));
      }
    }
  }

  GradientResult r;
  r.method = GradientMethod::fixed_point;
  r.value = vs.values(start.state, start.context);
  r.field.resize(static_cast<Eigen::Index>(S * H), static_cast<Eigen::Index>(p));
  r.gradient.resize(static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < p; ++i) {
    std::vector<double> offset(S * H);
    for (std::size_t k = 0; k < S * H; ++k) offset[k] = b(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i));
    ValueTable g(S, H, 0.0);
    ValueTable g2(S, H, 0.0);
    bool converged = false;
    double resid = 0.0;
    std::size_t it = 0;
    while (it < options.max_iter) {
      ++it;
      backup.apply_affine(g, offset, g2);
      resid = sup_norm_distance(g, g2);
      std::swap(g, g2);
      if (resid <= options.tolerance) {
        converged = true;
        break;
      }
    }
    if (!converged) throw RuntimeFailure("not converged: gradient fixed point");
    r.residual = std::max(r.residual, resid);
    r.iterations = std::max(r.iterations, it);
    for (std::size_t k = 0; k < S * H; ++k) {
      r.field(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = g.values()[k];
    }
    r.gradient(static_cast<Eigen::Index>(i)) = g(start.state, start.context);
  }
  return r;
}

GradientResult finite_difference_gradient(const ControlProblem& problem,
                                          const Eigen::VectorXd& theta,
                                          const PolicyTable& policy, StartState start,
                                          const FiniteDifferenceOptions& options) {
  check_start(problem, start);
  check_policy(problem, policy);
  if (!(options.step > 0.0)) throw ValidationError("finite-difference step must be positive");
  const std::size_t p = problem.model().parameter_dim();
  std::vector<std::size_t> coords = options.coords;
  if (coords.empty()) {
    coords.resize(p);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
  }
  SolveOptions so;
  so.tolerance = options.tolerance;
  const SolveResult base = value_iteration(problem, PolicyOperator{theta, policy}, so);
  so.warm_start = &base.values;

  GradientResult r;
  r.method = GradientMethod::finite_difference;
  r.step = options.step;
  r.value = base.values(start.state, start.context);
  r.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  for (std::size_t c : coords) {
    if (c >= p) throw ValidationError("finite-difference coordinate out of range");
    Eigen::VectorXd tp = theta;
    Eigen::VectorXd tm = theta;
    tp(static_cast<Eigen::Index>(c)) += options.step;
    tm(static_cast<Eigen::Index>(c)) -= options.step;
    if (!problem.domain().contains(tp) || !problem.domain().contains(tm)) {
      throw ValidationError("domain violation: theta +/- step leaves Theta in coordinate " +
                            std::to_string(c));
    }
    const SolveResult vp = value_iteration(problem, PolicyOperator{tp, policy}, so);
    const SolveResult vm = value_iteration(problem, PolicyOperator{tm, policy}, so);
    if (!vp.report.converged || !vm.report.converged) throw RuntimeFailure("not converged: policy evaluation");
    r.gradient(static_cast<Eigen::Index>(c)) =
        (vp.values(start.state, start.context) - vm.values(start.state, start.context)) / (2.0 * options.step);
    r.iterations = std::max({r.iterations, vp.report.iterations, vm.report.iterations});
  }
  return r;
}

BvmVariance bvm_variance(const Eigen::VectorXd& grad_g, const FisherResult& fisher,
                         std::vector<std::size_t> coords) {
  if (grad_g.size() != fisher.matrix.rows() || fisher.matrix.rows() != fisher.matrix.cols()) {
    throw ValidationError("gradient and Fisher matrix dimensions differ");
  }
  if (!fisher.invertible) {
    throw RuntimeFailure("singular Fisher: minimum eigenvalue " + std::to_string(fisher.min_eigenvalue));
  }
  Eigen::LLT<Eigen::MatrixXd> llt(fisher.matrix);
  if (llt.info() != Eigen::Success) throw RuntimeFailure("singular Fisher: factorization failed");
  BvmVariance out;
  out.grad_g = grad_g;
  out.fisher = fisher.matrix;
  out.fisher_min_eig = fisher.min_eigenvalue;
  out.sigma_sq = std::max(0.0, grad_g.dot(llt.solve(grad_g)));
  out.coords = std::move(coords);
  return out;
}

BvmVariance bvm_variance(const ControlProblem& problem, const Eigen::VectorXd& theta_star,
                         const PolicyTable& policy_star, StartState start,
                         GradientMethod method, const McGradientOptions& mc) {
  const auto coords = problem.domain().free_indices();
  GradientResult g;
  switch (method) {
    case GradientMethod::monte_carlo:
      g = mc_gradient(problem, theta_star, policy_star, start, mc);
      break;
    case GradientMethod::fixed_point:
      g = fixed_point_gradient(problem, theta_star, policy_star, start);
      break;
    case GradientMethod::finite_difference: {
      FiniteDifferenceOptions fd;
      fd.coords = coords;
      g = finite_difference_gradient(problem, theta_star, policy_star, start, fd);
      break;
    }
  }
  const FisherResult fisher = fisher_averaged(problem.model(), theta_star, problem.chain(), coords);
  return bvm_variance(restrict_vector(g.gradient, coords), fisher, coords);
}

AsymptoticGap asymptotic_gap(const ControlProblem& problem, const ParameterMixture& posterior,
                             const PolicyTable& policy_star, std::size_t N, StartState start,
                             const AsymptoticGapOptions& options) {
  check_start(problem, start);
  check_policy(problem, policy_star);
  if (posterior.size() == 0) throw ValidationError("empty posterior");
  AsymptoticGap out;
  if (options.bayes_value) {
    out.bayes_value = *options.bayes_value;
  } else {
    SolveOptions so;
    so.tolerance = options.tolerance;
    so.warm_start = options.warm_start;
    const SolveResult vb = value_iteration(problem, BayesOperator{posterior}, so);
    if (!vb.report.converged) throw RuntimeFailure("not converged: Bayesian value iteration");
    out.bayes_value = vb.values(start.state, start.context);
  }

  std::vector<std::size_t> order(posterior.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return posterior.weights[a] > posterior.weights[b];
  });
  const double total = std::accumulate(posterior.weights.begin(), posterior.weights.end(), 0.0);
  double covered = 0.0;
  double acc = 0.0;
  SolveOptions so;
  so.tolerance = options.tolerance;
  so.warm_start = options.warm_start;
  for (std::size_t k : order) {
    if (covered >= (1.0 - options.mass_tolerance) * total) break;
    const double wk = posterior.weights[k];
    if (!(wk > 0.0)) break;
    const SolveResult vk = value_iteration(problem, PolicyOperator{posterior.theta(k), policy_star}, so);
    if (!vk.report.converged) throw RuntimeFailure("not converged: policy evaluation");
    acc += wk * vk.values(start.state, start.context);
    covered += wk;
    ++out.nodes_used;
  }
  out.policy_average = acc / covered;
  out.dropped_mass = std::max(0.0, (total - covered) / total);
  out.gap = std::sqrt(static_cast<double>(N)) * (out.bayes_value - out.policy_average);
  return out;
}

}  // namespace bayesoc
