#include "bayesoc/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "bayesoc/error.hpp"
#include "bayesoc/parallel.hpp"
#include "bayesoc/rng.hpp"

namespace bayesoc {

namespace {

// Stream tags (second argument of derive_seed's b slot) per purpose.
constexpr std::uint64_t kDatasetStream = 0;
constexpr std::uint64_t kContextStream = 1;
constexpr std::uint64_t kNoiseStream = 2;
constexpr std::uint64_t kSpotCheckStream = 100;
constexpr std::uint64_t kGradientStream = 200;

bool nonincreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[i - 1]) return false;
  }
  return true;
}

bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] < v[i - 1])) return false;
  }
  return true;
}

std::string join(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += format_double(v[i]);
  }
  return s + "]";
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(v[i]);
  }
  return s + "]";
}

void check_ladder(const std::vector<std::size_t>& ladder, std::size_t replications,
                  const std::string& what) {
  if (ladder.empty()) throw ValidationError(what + ": N-ladder is empty");
  for (std::size_t i = 1; i < ladder.size(); ++i) {
    if (ladder[i] <= ladder[i - 1]) throw ValidationError(what + ": N-ladder must be strictly increasing");
  }
  if (replications < 1) throw ValidationError(what + ": replications must be >= 1");
}

Gate make_gate(std::string name, bool ok, std::string detail) {
  return Gate{std::move(name), ok, std::move(detail)};
}

std::string theta_label(std::size_t i) { return "theta_" + std::to_string(i + 1); }

double sample_mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_variance(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = sample_mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

}  // namespace

ScenarioSpec canonical_scenario_spec() {
  ScenarioSpec s;
  s.id = "canonical";
  s.chain.states = {"low", "high"};
  s.chain.transition = {{0.9, 0.1}, {0.5, 0.5}};
  s.chain.initial_context = 0;
  s.model.sigma = {{1.0}};
  s.model.theta_star = {0.5, 2.0, 0.0};
  s.model.lower = {-3.0, -3.0, -3.0};
  s.model.upper = {3.0, 3.0, 3.0};
  s.model.free = {true, true, false};
  s.problem.grid = StateGrid{{0.0}, {10.0}, {41}};
  for (int u = 0; u <= 5; ++u) s.problem.controls.push_back({static_cast<double>(u)});
  s.problem.gamma = 0.9;
  s.problem.cost = InventoryCost{1.0, 4.0, 0.5, 50.0};
  s.problem.dynamics = InventoryDynamics{};
  s.problem.quadrature = QuadratureRule::density_lattice(0.05, 8.0);
  s.problem.start = StartState{0, 0};
  return s;
}

namespace {

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows, const std::string& what) {
  if (rows.empty()) throw ValidationError(what + " is empty");
  const std::size_t cols = rows.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) throw ValidationError(what + " is ragged at row " + std::to_string(i));
    for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

Scenario build_scenario(const ScenarioSpec& spec) {
  const Eigen::MatrixXd P = to_matrix(spec.chain.transition, "transition matrix");
  if (P.rows() != P.cols() || static_cast<std::size_t>(P.rows()) != spec.chain.states.size()) {
    throw ValidationError("transition matrix must be H x H with H = number of states");
  }
  std::optional<std::vector<Eigen::VectorXd>> emb;
  if (!spec.chain.embeddings.empty()) {
    emb.emplace();
    for (const auto& e : spec.chain.embeddings) emb->push_back(to_vector(e));
  }
  ContextChain chain = make_chain(spec.chain.states, P, spec.chain.initial_context, emb);
  const auto violations = validate_chain(chain);
  if (!violations.empty()) {
    std::string msg = "invalid chain: ";
    for (std::size_t i = 0; i < violations.size(); ++i) msg += (i ? "; " : "") + violations[i];
    throw ValidationError(msg);
  }
  if (!is_irreducible_aperiodic(chain)) throw ValidationError("chain not ergodic");
  GaussianRegressionModel model(chain.embedding_dim(), to_matrix(spec.model.sigma, "sigma"));
  ParameterDomain domain;
  domain.lower = to_vector(spec.model.lower);
  domain.upper = to_vector(spec.model.upper);
  domain.free = spec.model.free;
  domain.validate(model.parameter_dim());
  const Eigen::VectorXd theta_star = to_vector(spec.model.theta_star);
  if (static_cast<std::size_t>(theta_star.size()) != model.parameter_dim()) {
    throw ValidationError("theta_star has dimension " + std::to_string(theta_star.size()) + ", model needs " +
                          std::to_string(model.parameter_dim()));
  }
  for (Eigen::Index i = 0; i < theta_star.size(); ++i) {
    if (domain.free[static_cast<std::size_t>(i)] &&
        !(theta_star(i) > domain.lower(i) && theta_star(i) < domain.upper(i))) {
      throw ValidationError("theta_star must lie in the interior of Theta (coordinate " + std::to_string(i) + ")");
    }
    if (!(theta_star(i) >= domain.lower(i) && theta_star(i) <= domain.upper(i))) {
      throw ValidationError("theta_star lies outside Theta (coordinate " + std::to_string(i) + ")");
    }
  }
  std::vector<Eigen::VectorXd> controls;
  for (const auto& u : spec.problem.controls) controls.push_back(to_vector(u));
  ControlProblem problem(spec.problem.grid, std::move(controls), spec.problem.gamma, spec.problem.cost,
                         spec.problem.dynamics, std::move(chain), std::move(model), std::move(domain),
                         spec.problem.quadrature);
  if (spec.problem.start.state >= problem.num_states() || spec.problem.start.context >= problem.num_contexts()) {
    throw ValidationError("start state outside the problem");
  }
  return Scenario{spec.id, std::move(problem), theta_star, spec.problem.start};
}

Scenario canonical_scenario() { return build_scenario(canonical_scenario_spec()); }

void ExperimentConfig::validate() const {
  if (!(reference_tolerance > 0.0) || !(solve_tolerance > 0.0)) {
    throw ValidationError("solve tolerances must be positive");
  }
  if (workers < 1) throw ValidationError("workers must be >= 1");
  check_ladder(consistency.ladder, consistency.replications, "consistency");
  if (consistency.epsilons.empty()) throw ValidationError("consistency: epsilon list is empty");
  for (double e : consistency.epsilons) {
    if (!(e > 0.0)) throw ValidationError("consistency: epsilon must be positive");
  }
  check_ladder(expdecay.ladder, expdecay.replications, "expdecay");
  if (!(0.0 < expdecay.beta && expdecay.beta < expdecay.alpha && expdecay.alpha < expdecay.epsilon)) {
    throw ValidationError("expdecay: need 0 < beta < alpha < epsilon");
  }
  if (expdecay.ladder.front() == 0) throw ValidationError("expdecay: N must be positive");
  check_ladder(ulln.ladder, ulln.replications, "ulln");
  if (ulln.ladder.front() == 0) throw ValidationError("ulln: N must be positive");
  if (bvm.n < 1 || bvm.replications < 2) throw ValidationError("bvm: need n >= 1 and replications >= 2");
  if (!(0.0 < bvm.variance_band_low && bvm.variance_band_low < bvm.variance_band_high)) {
    throw ValidationError("bvm: variance band must satisfy 0 < low < high");
  }
  for (std::size_t m : {consistency.grid_points, expdecay.grid_points, ulln.grid_points, bvm.grid_points}) {
    if (m < 2) throw ValidationError("grid_points must be >= 2");
  }
}

bool ExperimentReport::all_passed() const {
  return std::all_of(gates.begin(), gates.end(), [](const Gate& g) { return g.passed; });
}

const Gate* ExperimentReport::gate(const std::string& gname) const {
  for (const auto& g : gates) {
    if (g.name == gname) return &g;
  }
  return nullptr;
}

Dataset generate_dataset(const ContextChain& chain, const GaussianRegressionModel& model,
                         const Eigen::VectorXd& theta_star, std::size_t N, std::uint64_t seed) {
  Dataset data;
  data.dim = model.xi_dim();
  data.seed = seed;
  data.theta_star = theta_star;
  if (N == 0) return data;
  if (!is_irreducible_aperiodic(chain)) throw ValidationError("chain not ergodic");
  const auto path = simulate_context_path(chain, N, derive_seed(seed, 0, kContextStream));
  Rng rng(derive_seed(seed, 0, kNoiseStream));
  Eigen::VectorXd xi(static_cast<Eigen::Index>(data.dim));
  data.contexts.reserve(N);
  data.xi.reserve(N * data.dim);
  for (std::size_t i = 0; i < N; ++i) {
    model.sample_into(theta_star, chain.embeddings[path[i]], rng, xi);
    data.push_back(path[i], {xi.data(), data.dim});
  }
  return data;
}

ReferenceSolution solve_reference(const Scenario& scenario, double tolerance) {
  const TrueOperator op{scenario.theta_star};
  const BackupModel model = BackupModel::for_operator(scenario.problem, op);
  SolveOptions so;
  so.tolerance = tolerance;
  SolveResult res = value_iteration(model, so);
  if (!res.report.converged) throw RuntimeFailure("not converged: true value iteration");
  ReferenceSolution ref;
  ref.values = std::move(res.values);
  ref.report = res.report;
  ValueTable tmp;
  ref.policy = PolicyTable(model.states(), model.contexts());
  model.apply(ref.values, tmp, &ref.policy);
  ref.q_gap = q_gap_report(scenario.problem, ref.values, op);
  ref.start_value = ref.values(scenario.start.state, scenario.start.context);
  return ref;
}

GridSpec grid_spec(const Scenario& scenario, std::size_t points) {
  return GridSpec{scenario.problem.domain(), scenario.theta_star, points};
}

std::uint64_t replication_seed(std::uint64_t master, std::size_t replication) {
  return derive_seed(master, replication, kDatasetStream);
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double ks_distance_normal(std::vector<double> sample, double sigma) {
  if (sample.empty()) return 0.0;
  std::sort(sample.begin(), sample.end());
  const auto n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = sigma > 0.0 ? standard_normal_cdf(sample[i] / sigma) : (sample[i] >= 0.0 ? 1.0 : 0.0);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

double spot_check_residual(const BackupModel& model, const ValueTable& v, std::size_t count,
                           std::uint64_t seed) {
  const ValueTable tv = model.apply(v);
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick_s(0, model.states() - 1);
  std::uniform_int_distribution<std::size_t> pick_h(0, model.contexts() - 1);
  double worst = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t s = pick_s(rng);
    const std::size_t h = pick_h(rng);
    worst = std::max(worst, std::abs(tv(s, h) - v(s, h)));
  }
  return worst;
}

ExperimentReport run_consistency_experiment(const Scenario& scenario, const ExperimentConfig& config) {
  config.validate();
  const auto& cs = config.consistency;
  const auto& problem = scenario.problem;
  const auto& chain = problem.chain();
  const auto& model = problem.model();
  const ReferenceSolution ref = solve_reference(scenario, config.reference_tolerance);
  const GridSpec gspec = grid_spec(scenario, cs.grid_points);
  const auto free = problem.domain().free_indices();
  const std::size_t L = cs.ladder.size();
  const std::size_t R = cs.replications;
  const std::size_t H = chain.size();
  const std::size_t E = cs.epsilons.size();

  struct Row {
    std::vector<double> mass;
    Eigen::VectorXd mean;
    std::vector<double> l1;
    double gap = 0, scaled = 0, asym = 0, delta = 0, resid = 0;
    std::size_t iterations = 0, nodes = 0;
  };
  std::vector<std::vector<Row>> rows(R, std::vector<Row>(L));

  parallel_for(R, config.workers, [&](std::size_t r) {
    const std::uint64_t seed = replication_seed(config.master_seed, r);
    const Dataset full = generate_dataset(chain, model, scenario.theta_star, cs.ladder.back(), seed);
    for (std::size_t i = 0; i < L; ++i) {
      const std::size_t N = cs.ladder[i];
      const GridPosterior post =
          posterior_update_batch(PriorSpec::uniform(), gspec, model, chain, full.prefix(N));
      const ParameterMixture mix = post.mixture();
      Row& row = rows[r][i];
      for (double eps : cs.epsilons) row.mass.push_back(mass_outside_ball(post, scenario.theta_star, eps));
      row.mean = post.mean();
      for (std::size_t h = 0; h < H; ++h) {
        row.l1.push_back(predictive_l1_distance(mix, model, chain, h, scenario.theta_star));
      }
      const BackupModel bm = BackupModel::for_operator(problem, BayesOperator{mix});
      SolveOptions so;
      so.tolerance = config.solve_tolerance;
      so.warm_start = &ref.values;
      const SolveResult vb = value_iteration(bm, so);
      if (!vb.report.converged) throw RuntimeFailure("not converged: Bayesian value iteration");
      const double vn = vb.values(scenario.start.state, scenario.start.context);
      const double sqrt_n = std::sqrt(static_cast<double>(N));
      row.gap = sup_norm_distance(vb.values, ref.values);
      row.scaled = sqrt_n * (vn - ref.start_value);
      AsymptoticGapOptions ao;
      ao.tolerance = config.reference_tolerance;
      ao.warm_start = &ref.values;
      ao.bayes_value = vn;
      const AsymptoticGap ag = asymptotic_gap(problem, mix, ref.policy, N, scenario.start, ao);
      row.asym = ag.gap;
      row.delta = sqrt_n * (ag.policy_average - ref.start_value);
      row.nodes = ag.nodes_used;
      row.iterations = vb.report.iterations;
      row.resid = spot_check_residual(bm, vb.values, 5, derive_seed(config.master_seed, r, kSpotCheckStream + i));
    }
  });

  ExperimentReport rep;
  rep.name = "consistency";
  auto& hdr = rep.table.header;
  hdr = {"replication", "seed", "n"};
  for (double e : cs.epsilons) hdr.push_back("mass_outside_eps" + format_double(e));
  for (auto f : free) hdr.push_back("posterior_mean_" + theta_label(f));
  for (std::size_t h = 0; h < H; ++h) hdr.push_back("l1_" + chain.states[h]);
  for (const char* c : {"value_gap_sup", "scaled_error", "asymptotic_gap", "delta_stat",
                        "policy_eval_nodes", "bayes_iterations", "bellman_residual"}) {
    hdr.push_back(c);
  }
  double worst_resid = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    const std::uint64_t seed = replication_seed(config.master_seed, r);
    for (std::size_t i = 0; i < L; ++i) {
      const Row& row = rows[r][i];
      std::vector<std::string> cells{std::to_string(r), format_uint(seed), std::to_string(cs.ladder[i])};
      for (double m : row.mass) cells.push_back(format_double(m));
      for (auto f : free) cells.push_back(format_double(row.mean(static_cast<Eigen::Index>(f))));
      for (double v : row.l1) cells.push_back(format_double(v));
      for (double v : {row.gap, row.scaled, row.asym, row.delta}) cells.push_back(format_double(v));
      cells.push_back(std::to_string(row.nodes));
      cells.push_back(std::to_string(row.iterations));
      cells.push_back(format_double(row.resid));
      rep.table.rows.push_back(std::move(cells));
      worst_resid = std::max(worst_resid, row.resid);
    }
  }

  auto medians_of = [&](auto get) {
    std::vector<double> out(L);
    for (std::size_t i = 0; i < L; ++i) {
      std::vector<double> col(R);
      for (std::size_t r = 0; r < R; ++r) col[r] = get(rows[r][i]);
      out[i] = median(col);
    }
    return out;
  };
  const std::string ladder = " over N = " + join(cs.ladder);
  rep.summary.push_back("V*(x1,eta1) = " + format_double(ref.start_value) + ", min Q-gap " +
                        format_double(ref.q_gap.min_gap));
  for (std::size_t e = 0; e < E; ++e) {
    const auto med = medians_of([e](const Row& row) { return row.mass[e]; });
    const std::string tag = "eps" + format_double(cs.epsilons[e]);
    rep.summary.push_back("median mass_outside_ball(" + tag + ")" + ladder + ": " + join(med));
    rep.gates.push_back(make_gate("consistency.mass_" + tag + "_nonincreasing", nonincreasing(med), join(med)));
    for (std::size_t i = 0; i < L; ++i) {
      rep.metrics["median_mass_" + tag + "_N" + std::to_string(cs.ladder[i])] = med[i];
    }
  }
  {
    const std::size_t e = static_cast<std::size_t>(
        std::max_element(cs.epsilons.begin(), cs.epsilons.end()) - cs.epsilons.begin());
    const auto med = medians_of([e](const Row& row) { return row.mass[e]; });
    rep.gates.push_back(make_gate("consistency.mass_eps" + format_double(cs.epsilons[e]) + "_below_0.05_at_N" +
                                      std::to_string(cs.ladder.back()),
                                  med.back() < 0.05, format_double(med.back())));
  }
  for (std::size_t h = 0; h < H; ++h) {
    const auto med = medians_of([h](const Row& row) { return row.l1[h]; });
    rep.summary.push_back("median predictive L1 (" + chain.states[h] + ")" + ladder + ": " + join(med));
    rep.gates.push_back(make_gate("consistency.l1_" + chain.states[h] + "_nonincreasing", nonincreasing(med), join(med)));
  }
  const auto gap_med = medians_of([](const Row& row) { return row.gap; });
  rep.summary.push_back("median sup-norm value gap" + ladder + ": " + join(gap_med));
  rep.gates.push_back(make_gate("consistency.value_gap_nonincreasing", nonincreasing(gap_med), join(gap_med)));
  const auto asym_med = medians_of([](const Row& row) { return std::abs(row.asym); });
  rep.summary.push_back("median |asymptotic gap|" + ladder + ": " + join(asym_med));
  rep.gates.push_back(make_gate("consistency.asymptotic_gap_nonincreasing", nonincreasing(asym_med), join(asym_med)));
  const auto scaled_med = medians_of([](const Row& row) { return row.scaled; });
  rep.summary.push_back("median scaled error" + ladder + ": " + join(scaled_med));
  rep.gates.push_back(make_gate("consistency.bellman_residual_within_tolerance",
                                worst_resid <= config.solve_tolerance,
                                "max spot-check residual " + format_double(worst_resid)));
  for (std::size_t i = 0; i < L; ++i) {
    const std::string n = "_N" + std::to_string(cs.ladder[i]);
    rep.metrics["median_value_gap" + n] = gap_med[i];
    rep.metrics["median_abs_asymptotic_gap" + n] = asym_med[i];
  }
  return rep;
}

ExperimentReport run_exp_decay_check(const Scenario& scenario, const ExperimentConfig& config) {
  config.validate();
  const auto& es = config.expdecay;
  const auto& problem = scenario.problem;
  const auto& chain = problem.chain();
  const auto& model = problem.model();
  const GridSpec gspec = grid_spec(scenario, es.grid_points);
  const GridPosterior prior = make_grid_prior(PriorSpec::uniform(), gspec);
  const std::vector<double> psi = grid_population_loglik(prior, model, chain, scenario.theta_star);
  const double psi_star = population_loglik(model, chain, scenario.theta_star, scenario.theta_star);
  std::size_t core = 0;
  for (double v : psi) {
    if (psi_star - v < 0.5 * es.beta) ++core;
  }
  const double kappa = prior.cell_volume() * static_cast<double>(core);
  if (core == 0) throw RuntimeFailure("U_{beta/2} contains no grid node; refine the grid");
  const auto [c1, c2] = PriorSpec::uniform().density_bounds(problem.domain());
  const double log_prefactor = -std::log(kappa) + 2.0 * std::log(c1 / c2);
  const std::size_t L = es.ladder.size();
  const std::size_t R = es.replications;
  std::vector<std::vector<double>> logdens(R, std::vector<double>(L));

  parallel_for(R, config.workers, [&](std::size_t r) {
    const Dataset full = generate_dataset(chain, model, scenario.theta_star, es.ladder.back(),
                                          replication_seed(config.master_seed, r));
    for (std::size_t i = 0; i < L; ++i) {
      const GridPosterior post =
          posterior_update_batch(PriorSpec::uniform(), gspec, model, chain, full.prefix(es.ladder[i]));
      const auto ld = log_sup_density_outside(post, psi, psi_star, es.epsilon);
      if (!ld) throw RuntimeFailure("empty V_eps: no grid node has psi gap >= " + format_double(es.epsilon));
      logdens[r][i] = *ld;
    }
  });

  auto envelope = [&](std::size_t n) { return log_prefactor - static_cast<double>(n) * (es.alpha - es.beta); };
  ExperimentReport rep;
  rep.name = "expdecay";
  rep.table.header = {"replication", "seed", "n", "log_sup_density", "log_envelope", "below_envelope"};
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t cnt = 0;
  std::vector<bool> rung_ok(L, true);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t i = 0; i < L; ++i) {
      const std::size_t n = es.ladder[i];
      const bool below = logdens[r][i] <= envelope(n);
      rung_ok[i] = rung_ok[i] && below;
      rep.table.rows.push_back({std::to_string(r), format_uint(replication_seed(config.master_seed, r)),
                                std::to_string(n), format_double(logdens[r][i]), format_double(envelope(n)),
                                below ? "1" : "0"});
      const auto x = static_cast<double>(n);
      sx += x;
      sy += logdens[r][i];
      sxx += x * x;
      sxy += x * logdens[r][i];
      ++cnt;
    }
  }
  const double nn = static_cast<double>(cnt);
  const double denom = nn * sxx - sx * sx;
  const double slope = denom != 0.0 ? (nn * sxy - sx * sy) / denom : 0.0;
  // N0: first rung from which every later observation is below the envelope.
  std::optional<std::size_t> n0;
  for (std::size_t i = L; i-- > 0;) {
    if (!rung_ok[i]) break;
    n0 = es.ladder[i];
  }
  std::vector<double> med(L);
  for (std::size_t i = 0; i < L; ++i) {
    std::vector<double> col(R);
    for (std::size_t r = 0; r < R; ++r) col[r] = logdens[r][i];
    med[i] = median(col);
  }
  rep.summary.push_back("(eps, alpha, beta) = (" + format_double(es.epsilon) + ", " + format_double(es.alpha) +
                        ", " + format_double(es.beta) + "), kappa(beta) = " + format_double(kappa) +
                        " (" + std::to_string(core) + " nodes), c1/c2 = 1");
  rep.summary.push_back("median log sup density over N = " + join(es.ladder) + ": " + join(med));
  rep.summary.push_back("fitted slope " + format_double(slope) + " per unit N; envelope slope " +
                        format_double(-(es.alpha - es.beta)));
  rep.summary.push_back(n0 ? "N0 = " + std::to_string(*n0) : std::string("N0: none (last rung above envelope)"));
  rep.gates.push_back(make_gate("expdecay.slope_negative", slope < 0.0, format_double(slope)));
  rep.gates.push_back(make_gate("expdecay.below_envelope_beyond_N0", n0.has_value(),
                                n0 ? "N0 = " + std::to_string(*n0) : std::string("no N0 within the ladder")));
  rep.metrics["slope"] = slope;
  rep.metrics["envelope_slope"] = -(es.alpha - es.beta);
  rep.metrics["kappa"] = kappa;
  if (n0) rep.metrics["N0"] = static_cast<double>(*n0);
  return rep;
}

ExperimentReport run_uniform_lln_check(const Scenario& scenario, const ExperimentConfig& config) {
  config.validate();
  const auto& us = config.ulln;
  const auto& problem = scenario.problem;
  const auto& chain = problem.chain();
  const auto& model = problem.model();
  const GridPosterior grid = make_grid_prior(PriorSpec::uniform(), grid_spec(scenario, us.grid_points));
  const std::vector<double> psi = grid_population_loglik(grid, model, chain, scenario.theta_star);
  const double psi_star = population_loglik(model, chain, scenario.theta_star, scenario.theta_star);
  const std::size_t L = us.ladder.size();
  const std::size_t R = us.replications;
  std::vector<std::vector<double>> sup_gap(R, std::vector<double>(L));
  std::vector<std::vector<double>> star_gap(R, std::vector<double>(L));

  parallel_for(R, config.workers, [&](std::size_t r) {
    const Dataset full = generate_dataset(chain, model, scenario.theta_star, us.ladder.back(),
                                          replication_seed(config.master_seed, r));
    for (std::size_t i = 0; i < L; ++i) {
      const Dataset part = full.prefix(us.ladder[i]);
      const std::vector<double> phi = grid_empirical_loglik(grid, model, chain, part);
      double m = 0.0;
      for (std::size_t k = 0; k < phi.size(); ++k) m = std::max(m, std::abs(phi[k] - psi[k]));
      sup_gap[r][i] = m;
      star_gap[r][i] = std::abs(empirical_loglik(model, chain, part, scenario.theta_star) - psi_star);
    }
  });

  ExperimentReport rep;
  rep.name = "ulln";
  rep.table.header = {"replication", "seed", "n", "sup_gap", "gap_at_theta_star"};
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t i = 0; i < L; ++i) {
      rep.table.rows.push_back({std::to_string(r), format_uint(replication_seed(config.master_seed, r)),
                                std::to_string(us.ladder[i]), format_double(sup_gap[r][i]),
                                format_double(star_gap[r][i])});
    }
  }
  std::vector<double> med(L), med_star(L);
  for (std::size_t i = 0; i < L; ++i) {
    std::vector<double> a(R), b(R);
    for (std::size_t r = 0; r < R; ++r) {
      a[r] = sup_gap[r][i];
      b[r] = star_gap[r][i];
    }
    med[i] = median(a);
    med_star[i] = median(b);
    rep.metrics["median_sup_gap_N" + std::to_string(us.ladder[i])] = med[i];
  }
  rep.summary.push_back("median sup_k |phi_N - psi| over N = " + join(us.ladder) + ": " + join(med));
  rep.summary.push_back("median |phi_N(theta*) - psi(theta*)|: " + join(med_star));
  rep.gates.push_back(make_gate("ulln.median_sup_gap_decreasing", strictly_decreasing(med), join(med)));

  std::vector<double> f4, f2;
  std::string pairs4, pairs2;
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = i + 1; j < L; ++j) {
      const double f = med[i] / med[j];
      const std::string tag = std::to_string(us.ladder[i]) + "->" + std::to_string(us.ladder[j]) + ": " + format_double(f);
      if (us.ladder[j] == 4 * us.ladder[i]) {
        f4.push_back(f);
        pairs4 += (pairs4.empty() ? "" : ", ") + tag;
        rep.metrics["factor_4x_" + std::to_string(us.ladder[i])] = f;
      } else if (us.ladder[j] == 2 * us.ladder[i]) {
        f2.push_back(f);
        pairs2 += (pairs2.empty() ? "" : ", ") + tag;
        rep.metrics["factor_2x_" + std::to_string(us.ladder[i])] = f;
      }
    }
  }
  rep.summary.push_back("shrink factor per 4x N (1/sqrt(N) predicts 2): " + (pairs4.empty() ? "n/a" : pairs4));
  rep.summary.push_back("shrink factor per 2x N (1/sqrt(N) predicts 1.414): " + (pairs2.empty() ? "n/a" : pairs2));
  const bool band4 = !f4.empty() && std::all_of(f4.begin(), f4.end(), [](double f) { return f >= 1.2 && f <= 1.8; });
  rep.gates.push_back(make_gate("ulln.factor_per_4x_in_[1.2,1.8]", band4, pairs4.empty() ? "no 4x pair in ladder" : pairs4));
  return rep;
}

ExperimentReport run_bvm_experiment(const Scenario& scenario, const ExperimentConfig& config) {
  config.validate();
  const auto& bs = config.bvm;
  const auto& problem = scenario.problem;
  const auto& chain = problem.chain();
  const auto& model = problem.model();
  const ReferenceSolution ref = solve_reference(scenario, config.reference_tolerance);
  if (ref.q_gap.min_gap < 1e-6) {
    throw RuntimeFailure("optimal policy not unique: min Q-gap " + format_double(ref.q_gap.min_gap) +
                         " < 1e-6");
  }
  McGradientOptions mc;
  mc.seed = derive_seed(config.master_seed, 0, kGradientStream);
  mc.workers = config.workers;
  const BvmVariance var = bvm_variance(problem, scenario.theta_star, ref.policy, scenario.start,
                                       config.gradient_method, mc);
  const GridSpec gspec = grid_spec(scenario, bs.grid_points);
  const auto free = problem.domain().free_indices();
  const std::size_t nf = free.size();
  const PriorSpec flat_gaussian =
      PriorSpec::gaussian(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nf)),
                          1e4 * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(nf), static_cast<Eigen::Index>(nf)));
  const std::size_t R = bs.replications;
  const std::size_t N = bs.n;
  const double sqrt_n = std::sqrt(static_cast<double>(N));

  struct Row {
    double scaled = 0, asym = 0, delta = 0, resid = 0, mean_gap = 0;
    Eigen::VectorXd grid_mean, conj_mean;
    std::size_t iterations = 0, nodes = 0;
  };
  std::vector<Row> rows(R);
  std::vector<double> spacing;
  parallel_for(R, config.workers, [&](std::size_t r) {
    const Dataset data = generate_dataset(chain, model, scenario.theta_star, N,
                                          replication_seed(config.master_seed, r));
    const GridPosterior post = posterior_update_batch(PriorSpec::uniform(), gspec, model, chain, data);
    const ParameterMixture mix = post.mixture();
    const BackupModel bm = BackupModel::for_operator(problem, BayesOperator{mix});
    SolveOptions so;
    so.tolerance = config.solve_tolerance;
    so.warm_start = &ref.values;
    const SolveResult vb = value_iteration(bm, so);
    if (!vb.report.converged) throw RuntimeFailure("not converged: Bayesian value iteration");
    const double vn = vb.values(scenario.start.state, scenario.start.context);
    AsymptoticGapOptions ao;
    ao.tolerance = config.reference_tolerance;
    ao.warm_start = &ref.values;
    ao.bayes_value = vn;
    const AsymptoticGap ag = asymptotic_gap(problem, mix, ref.policy, N, scenario.start, ao);
    const ConjugatePosterior conj =
        conjugate_update(flat_gaussian, model, chain, data, free, scenario.theta_star);
    Row& row = rows[r];
    row.scaled = sqrt_n * (vn - ref.start_value);
    row.asym = ag.gap;
    row.delta = sqrt_n * (ag.policy_average - ref.start_value);
    row.nodes = ag.nodes_used;
    row.iterations = vb.report.iterations;
    row.grid_mean = restrict_vector(post.mean(), free);
    row.conj_mean = conj.mean;
    double worst = 0.0;
    for (std::size_t i = 0; i < nf; ++i) {
      worst = std::max(worst, std::abs(row.grid_mean(static_cast<Eigen::Index>(i)) -
                                       row.conj_mean(static_cast<Eigen::Index>(i))) /
                                  post.spacing()[i]);
    }
    row.mean_gap = worst;
    row.resid = spot_check_residual(bm, vb.values, 5, derive_seed(config.master_seed, r, kSpotCheckStream));
  });

  ExperimentReport rep;
  rep.name = "bvm";
  auto& hdr = rep.table.header;
  hdr = {"replication", "seed", "n", "scaled_error", "asymptotic_gap", "delta_stat"};
  for (auto f : free) hdr.push_back("grid_mean_" + theta_label(f));
  for (auto f : free) hdr.push_back("conjugate_mean_" + theta_label(f));
  for (const char* c : {"policy_eval_nodes", "bayes_iterations", "bellman_residual"}) hdr.push_back(c);
  std::vector<double> e(R), g(R), dl(R);
  double worst_resid = 0.0, worst_mean_gap = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    const Row& row = rows[r];
    std::vector<std::string> cells{std::to_string(r), format_uint(replication_seed(config.master_seed, r)),
                                   std::to_string(N), format_double(row.scaled), format_double(row.asym),
                                   format_double(row.delta)};
    for (Eigen::Index i = 0; i < row.grid_mean.size(); ++i) cells.push_back(format_double(row.grid_mean(i)));
    for (Eigen::Index i = 0; i < row.conj_mean.size(); ++i) cells.push_back(format_double(row.conj_mean(i)));
    cells.push_back(std::to_string(row.nodes));
    cells.push_back(std::to_string(row.iterations));
    cells.push_back(format_double(row.resid));
    rep.table.rows.push_back(std::move(cells));
    e[r] = row.scaled;
    g[r] = row.asym;
    dl[r] = row.delta;
    worst_resid = std::max(worst_resid, row.resid);
    worst_mean_gap = std::max(worst_mean_gap, row.mean_gap);
  }

  const double s2 = var.sigma_sq;
  rep.metrics["sigma_sq"] = s2;
  rep.metrics["fisher_min_eig"] = var.fisher_min_eig;
  std::string grad = "[";
  for (Eigen::Index i = 0; i < var.grad_g.size(); ++i) grad += (i ? ", " : "") + format_double(var.grad_g(i));
  grad += "]";
  rep.summary.push_back("V*(x1,eta1) = " + format_double(ref.start_value) + ", min Q-gap " +
                        format_double(ref.q_gap.min_gap));
  rep.summary.push_back("gradient (" + std::string(gradient_method_name(config.gradient_method)) +
                        ", free coordinates) = " + grad + ", Fisher min eigenvalue " +
                        format_double(var.fisher_min_eig) + ", sigma^2 = " + format_double(s2));
  auto describe = [&](const std::string& label, const std::vector<double>& x) {
    const double m = sample_mean(x);
    const double v = sample_variance(x);
    const double ks = ks_distance_normal(x, std::sqrt(s2));
    rep.summary.push_back(label + ": mean " + format_double(m) + ", sd " + format_double(std::sqrt(v)) +
                          ", variance " + format_double(v) + ", variance / sigma^2 " +
                          format_double(s2 > 0 ? v / s2 : std::numeric_limits<double>::infinity()) +
                          ", KS distance to N(0, sigma^2) " + format_double(ks));
    rep.metrics[label + ".mean"] = m;
    rep.metrics[label + ".variance"] = v;
    rep.metrics[label + ".ks"] = ks;
  };
  describe("scaled_error", e);
  describe("asymptotic_gap", g);
  describe("delta_stat", dl);

  const double m = sample_mean(e);
  const double sd = std::sqrt(sample_variance(e));
  const double band = 3.0 * sd / std::sqrt(static_cast<double>(R));
  const double ratio = s2 > 0 ? sample_variance(e) / s2 : std::numeric_limits<double>::infinity();
  rep.metrics["scaled_error.variance_ratio"] = ratio;
  rep.gates.push_back(make_gate("bvm.mean_within_3se", std::abs(m) <= band,
                                "mean " + format_double(m) + ", 3 sd/sqrt(M) = " + format_double(band)));
  rep.gates.push_back(make_gate("bvm.variance_ratio_in_[" + format_double(bs.variance_band_low) + "," +
                                    format_double(bs.variance_band_high) + "]",
                                ratio >= bs.variance_band_low && ratio <= bs.variance_band_high,
                                "variance / sigma^2 = " + format_double(ratio)));
  rep.gates.push_back(make_gate("bvm.conjugate_mean_within_2_spacings", worst_mean_gap <= 2.0,
                                "max |grid - conjugate| / spacing = " + format_double(worst_mean_gap)));
  rep.gates.push_back(make_gate("bvm.bellman_residual_within_tolerance", worst_resid <= config.solve_tolerance,
                                "max spot-check residual " + format_double(worst_resid)));
  return rep;
}

std::string summary_text(const std::vector<ExperimentReport>& reports) {
  std::ostringstream os;
  for (const auto& rep : reports) {
    os << "[" << rep.name << "]\n";
    for (const auto& line : rep.summary) os << "  " << line << '\n';
    for (const auto& g : rep.gates) {
      os << (g.passed ? "PASS " : "FAIL ") << g.name << ": " << g.detail << '\n';
    }
  }
  return os.str();
}

}  // namespace bayesoc
