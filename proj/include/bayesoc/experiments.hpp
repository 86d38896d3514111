#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bayesoc/bellman.hpp"
#include "bayesoc/control_problem.hpp"
#include "bayesoc/format.hpp"
#include "bayesoc/posterior.hpp"
#include "bayesoc/sensitivity.hpp"

namespace bayesoc {

struct Scenario {
  std::string id;
  ControlProblem problem;
  Eigen::VectorXd theta_star;
  StartState start;
};

// Plain-data description of a scenario, the form configs are parsed into.
struct ChainSpec {
  std::vector<std::string> states;
  std::vector<std::vector<double>> transition;
  std::size_t initial_context = 0;
  std::vector<std::vector<double>> embeddings;  // empty: one-hot
};
struct ModelSpec {
  std::vector<std::vector<double>> sigma;
  std::vector<double> theta_star;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<bool> free;
};
struct ProblemSpec {
  StateGrid grid;
  std::vector<std::vector<double>> controls;
  double gamma = 0.9;
  CostSpec cost;
  DynamicsSpec dynamics;
  QuadratureRule quadrature;
  StartState start;
};
struct ScenarioSpec {
  std::string id;
  ChainSpec chain;
  ModelSpec model;
  ProblemSpec problem;
};

ScenarioSpec canonical_scenario_spec();
// Validates every invariant (chain, ergodicity, Sigma, domain, theta* in the
// interior of Theta, start state) and assembles the problem.
Scenario build_scenario(const ScenarioSpec& spec);

// Two contexts (low, high) with rows [0.9, 0.1], [0.5, 0.5], one-hot
// embeddings, d = 1, theta = (A_low, A_high, b) with b pinned at 0,
// Sigma = [1], Theta = [-3, 3]^3, theta* = (0.5, 2.0, 0), inventory on a
// 41-point grid over [0, 10], controls {0..5}, h = 1, s = 4, k = 0.5,
// c_max = 50, gamma = 0.9, start (x = 0, eta = low).
Scenario canonical_scenario();

struct ConsistencySettings {
  std::vector<std::size_t> ladder{100, 400, 1600};
  std::size_t replications = 20;
  std::vector<double> epsilons{0.1, 0.2};
  std::size_t grid_points = 201;  // 41 quantizes the N=1600 posterior (sd 0.03 vs spacing 0.15)
};

struct ExpDecaySettings {
  std::vector<std::size_t> ladder{50, 100, 200, 400, 800, 1600};
  std::size_t replications = 5;
  double epsilon = 0.5;
  double alpha = 0.4;
  double beta = 0.1;
  std::size_t grid_points = 41;
};

struct UllnSettings {
  std::vector<std::size_t> ladder{100, 200, 400, 800, 1600};
  std::size_t replications = 20;
  std::size_t grid_points = 41;
};

struct BvmSettings {
  std::size_t n = 1000;
  std::size_t replications = 200;
  std::size_t grid_points = 401;
  double variance_band_low = 0.6;
  double variance_band_high = 1.6;
};

struct ExperimentConfig {
  std::uint64_t master_seed = 20240601;
  GradientMethod gradient_method = GradientMethod::fixed_point;
  double reference_tolerance = 1e-10;  // V* and policy evaluations
  double solve_tolerance = 1e-8;       // V_N*
  std::size_t workers = 1;
  ConsistencySettings consistency;
  ExpDecaySettings expdecay;
  UllnSettings ulln;
  BvmSettings bvm;

  // Throws ValidationError naming the violated invariant.
  void validate() const;
};

struct Gate {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ExperimentReport {
  std::string name;
  CsvTable table;
  std::vector<std::string> summary;
  std::vector<Gate> gates;
  std::map<std::string, double> metrics;

  bool all_passed() const;
  const Gate* gate(const std::string& name) const;
};

// xi_i ~ f(.|eta_i, theta*) along a simulated context path started at the
// chain's initial context. The context path and the noise use separate
// streams derived from `seed`.
Dataset generate_dataset(const ContextChain& chain, const GaussianRegressionModel& model,
                         const Eigen::VectorXd& theta_star, std::size_t N, std::uint64_t seed);

// V*, pi* of the true operator plus the Q-gap surrogate for uniqueness of pi*.
struct ReferenceSolution {
  ValueTable values;
  PolicyTable policy;
  SolveReport report;
  QGapReport q_gap;
  double start_value = 0.0;
};
ReferenceSolution solve_reference(const Scenario& scenario, double tolerance);

GridSpec grid_spec(const Scenario& scenario, std::size_t points);

// Seed of the dataset used by replication r (shared by every rung of a nested ladder).
std::uint64_t replication_seed(std::uint64_t master, std::size_t replication);

ExperimentReport run_consistency_experiment(const Scenario& scenario, const ExperimentConfig& config);
ExperimentReport run_exp_decay_check(const Scenario& scenario, const ExperimentConfig& config);
ExperimentReport run_uniform_lln_check(const Scenario& scenario, const ExperimentConfig& config);
ExperimentReport run_bvm_experiment(const Scenario& scenario, const ExperimentConfig& config);

// sup_x |F_n(x) - Phi(x / sigma)|
double ks_distance_normal(std::vector<double> sample, double sigma);
double median(std::vector<double> values);

// Bayesian Bellman residual |(T_N V)(s,h) - V(s,h)| at `count` rows drawn from `seed`.
double spot_check_residual(const BackupModel& model, const ValueTable& v, std::size_t count,
                           std::uint64_t seed);

std::string summary_text(const std::vector<ExperimentReport>& reports);

}  // namespace bayesoc
