// Acceptance suite: one PASS/FAIL line per criterion. `--only k` runs a single
// criterion (ctest registers each separately).
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bayesoc/cli_io.hpp"
#include "bayesoc/experiments.hpp"
#include "bayesoc/format.hpp"

using namespace bayesoc;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool passed = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string join(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s + "]";
}

bool nonincreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[i - 1]) return false;
  return true;
}

std::size_t col(const CsvTable& t, const std::string& name) {
  const auto it = std::find(t.header.begin(), t.header.end(), name);
  if (it == t.header.end()) throw std::runtime_error("missing column " + name);
  return static_cast<std::size_t>(it - t.header.begin());
}

// Median over replications of `name` (optionally |.|) for each n in the ladder.
std::vector<double> medians_by_n(const CsvTable& t, const std::string& name, const std::vector<std::size_t>& ladder,
                                 bool absolute = false) {
  const std::size_t cn = col(t, "n"), cv = col(t, name);
  std::vector<double> out;
  for (std::size_t n : ladder) {
    std::vector<double> xs;
    for (const auto& row : t.rows) {
      if (std::stoull(row[cn]) != n) continue;
      const double x = std::stod(row[cv]);
      xs.push_back(absolute ? std::abs(x) : x);
    }
    out.push_back(median(xs));
  }
  return out;
}

ValueTable random_table(std::size_t s, std::size_t h, Rng& rng) {
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  ValueTable v(s, h);
  for (double& x : v.values()) x = u(rng);
  return v;
}

ParameterMixture canonical_posterior(const Scenario& sc, std::size_t n, std::uint64_t seed) {
  const auto& p = sc.problem;
  const Dataset d = generate_dataset(p.chain(), p.model(), sc.theta_star, n, seed);
  return posterior_update_batch(PriorSpec::uniform(), grid_spec(sc, 41), p.model(), p.chain(), d).mixture();
}

Verdict contraction_suite() {
  const Scenario sc = canonical_scenario();
  const auto& p = sc.problem;
  const double gamma = p.gamma();
  const BackupModel models[] = {BackupModel::for_operator(p, TrueOperator{sc.theta_star}),
                                BackupModel::for_operator(p, BayesOperator{canonical_posterior(sc, 400, 11)})};
  const char* names[] = {"T", "T_N"};
  Rng rng(derive_seed(1, 0, 0));
  std::uniform_real_distribution<double> bump(0.0, 10.0);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  std::string detail;
  bool ok = true;
  for (int m = 0; m < 2; ++m) {
    double worst_contraction = -1e300, worst_shift = 0.0;
    bool monotone = true;
    for (int trial = 0; trial < 100; ++trial) {
      const ValueTable v1 = random_table(p.num_states(), p.num_contexts(), rng);
      const ValueTable v2 = random_table(p.num_states(), p.num_contexts(), rng);
      const ValueTable a = models[m].apply(v1), b = models[m].apply(v2);
      worst_contraction = std::max(worst_contraction, sup_norm_distance(a, b) - gamma * sup_norm_distance(v1, v2));

      ValueTable up = v1;
      for (double& x : up.values()) x += bump(rng);
      const ValueTable c = models[m].apply(up);
      for (std::size_t i = 0; i < c.values().size(); ++i) monotone = monotone && a.values()[i] <= c.values()[i];

      const double kappa = shift(rng);
      ValueTable sh = v1;
      for (double& x : sh.values()) x += kappa;
      const ValueTable d = models[m].apply(sh);
      for (std::size_t i = 0; i < d.values().size(); ++i)
        worst_shift = std::max(worst_shift, std::abs(d.values()[i] - a.values()[i] - gamma * kappa));
    }
    const bool pass = worst_contraction <= 1e-12 && monotone && worst_shift <= 1e-12;
    ok = ok && pass;
    detail += std::string(m ? "; " : "") + names[m] + ": max(||OV1-OV2|| - g||V1-V2||) = " + fmt(worst_contraction) +
              ", monotone = " + (monotone ? "yes" : "no") + ", shift error = " + fmt(worst_shift);
  }
  return {ok, detail};
}

Verdict closed_form_value() {
  double worst = 0.0;
  std::string names;
  const DynamicsSpec dyns[] = {InventoryDynamics{}, LinearDynamics{0.7, 1.0, -1.0}, StaticDynamics{}};
  for (const auto& dyn : dyns) {
    ScenarioSpec spec = canonical_scenario_spec();
    spec.problem.cost = ConstantCost{1.0, 50.0};
    spec.problem.dynamics = dyn;
    const Scenario sc = build_scenario(spec);
    SolveOptions so;
    so.tolerance = 1e-10;
    const auto res = value_iteration(sc.problem, TrueOperator{sc.theta_star}, so);
    for (double v : res.values.values()) worst = std::max(worst, std::abs(v - 10.0));
    names += std::string(names.empty() ? "" : ", ") + std::string(dynamics_name(dyn));
  }
  return {worst <= 1e-8, "max |V - 10| over all cells = " + fmt(worst) + " (dynamics: " + names + ")"};
}

Verdict posterior_oracle() {
  const Scenario sc = canonical_scenario();
  const auto& p = sc.problem;
  const Dataset data = generate_dataset(p.chain(), p.model(), sc.theta_star, 400, derive_seed(3, 0, 0));
  const std::vector<std::size_t> free = p.domain().free_indices();
  const PriorSpec prior = PriorSpec::gaussian(Eigen::VectorXd::Zero(2), 4.0 * Eigen::MatrixXd::Identity(2, 2));
  const ConjugatePosterior conj = conjugate_update(prior, p.model(), p.chain(), data, free, sc.theta_star);
  const GridPosterior grid = posterior_update_batch(prior, grid_spec(sc, 401), p.model(), p.chain(), data);

  // boundary mass of the exact posterior outside Theta (independent coordinates here)
  double outside = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    const double m = conj.mean(i), s = std::sqrt(conj.covariance(i, i));
    const double lo = p.domain().lower(free[i]), hi = p.domain().upper(free[i]);
    outside += standard_normal_cdf((lo - m) / s) + standard_normal_cdf((m - hi) / s);
  }
  if (outside >= 1e-6) return {false, "boundary mass " + fmt(outside) + " too large for the oracle"};

  const Eigen::VectorXd gm = grid.mean();
  double mean_err = 0.0;
  for (std::size_t i = 0; i < 2; ++i)
    mean_err = std::max(mean_err, std::abs(gm(free[i]) - conj.mean(i)) / grid.spacing()[i]);

  const std::vector<std::function<double(std::span<const double>)>> integrands = {
      [](std::span<const double> x) { return std::tanh(x[0]); },
      [](std::span<const double> x) { return std::cos(x[0]); },
      [](std::span<const double> x) { return std::exp(-0.5 * x[0] * x[0]); },
      [](std::span<const double> x) { return std::clamp(x[0], -1.0, 3.0); },
      [](std::span<const double> x) { return 1.0 / (1.0 + std::exp(-2.0 * (x[0] - 1.0))); },
  };
  const ParameterMixture gmix = grid.mixture();
  const ParameterMixture cmix = conj.to_mixture(20);
  double pred_err = 0.0;
  for (const auto& f : integrands) {
    for (std::size_t h = 0; h < p.num_contexts(); ++h) {
      pred_err = std::max(pred_err, std::abs(predictive_expectation(gmix, p.quadrature(), h, f) -
                                             predictive_expectation(cmix, p.quadrature(), h, f)));
    }
  }
  return {mean_err <= 2.0 && pred_err <= 1e-3,
          "max mean gap = " + fmt(mean_err) + " spacings, max predictive gap = " + fmt(pred_err) +
              " (5 integrands x 2 contexts), boundary mass " + fmt(outside)};
}

Verdict score_fisher() {
  const Scenario sc = canonical_scenario();
  const auto& p = sc.problem;
  const auto& model = p.model();
  const auto& chain = p.chain();
  const Eigen::VectorXd nu = stationary_distribution(chain).weights;
  const std::size_t n = 100000;
  Rng rng(derive_seed(4, 0, 0));
  std::discrete_distribution<std::size_t> ctx(nu.data(), nu.data() + nu.size());
  const Eigen::Index dim = static_cast<Eigen::Index>(model.parameter_dim());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim), sq = Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd xi(1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t h = ctx(rng);
    model.sample_into(sc.theta_star, chain.embeddings[h], rng, xi);
    const Eigen::VectorXd s = model.score(sc.theta_star, xi, chain.embeddings[h]);
    sum += s;
    sq += s.cwiseProduct(s);
    outer += s * s.transpose();
  }
  const double dn = static_cast<double>(n);
  const Eigen::VectorXd mean = sum / dn;
  double worst_z = 0.0;
  for (Eigen::Index i = 0; i < dim; ++i) {
    const double se = std::sqrt((sq(i) / dn - mean(i) * mean(i)) / (dn - 1.0));
    worst_z = std::max(worst_z, std::abs(mean(i)) / se);
  }
  const Eigen::MatrixXd closed = fisher_averaged(model, sc.theta_star, chain).matrix;
  const double frob = (outer / dn - closed).norm() / closed.norm();

  double fd_err = 0.0;
  std::normal_distribution<double> n01;
  std::uniform_int_distribution<std::size_t> pick(0, 1);
  const double step = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd theta(dim);
    for (Eigen::Index i = 0; i < dim; ++i) theta(i) = 2.0 * n01(rng);
    Eigen::VectorXd x(1);
    x(0) = 3.0 * n01(rng);
    const auto& eta = chain.embeddings[pick(rng)];
    const Eigen::VectorXd s = model.score(theta, x, eta);
    for (Eigen::Index i = 0; i < dim; ++i) {
      Eigen::VectorXd tp = theta, tm = theta;
      tp(i) += step;
      tm(i) -= step;
      fd_err = std::max(fd_err, std::abs((model.log_density(tp, x, eta) - model.log_density(tm, x, eta)) / (2 * step) - s(i)));
    }
  }
  return {worst_z <= 3.0 && frob <= 0.02 && fd_err <= 1e-6,
          "max |mean score|/SE = " + fmt(worst_z) + ", Fisher rel. Frobenius error = " + fmt(frob) +
              ", score vs FD max error = " + fmt(fd_err)};
}

Verdict gradient_cross_validation() {
  const Scenario sc = canonical_scenario();
  const auto& p = sc.problem;
  const ReferenceSolution ref = solve_reference(sc, 1e-10);
  const GradientResult fp = fixed_point_gradient(p, sc.theta_star, ref.policy, sc.start);
  FiniteDifferenceOptions fdo;
  fdo.coords = p.domain().free_indices();
  const GradientResult fd = finite_difference_gradient(p, sc.theta_star, ref.policy, sc.start, fdo);
  McGradientOptions mco;
  mco.replications = 10000;
  mco.seed = derive_seed(20240601, 0, 200);
  const GradientResult mc = mc_gradient(p, sc.theta_star, ref.policy, sc.start, mco);
  bool ok = true;
  std::string detail;
  for (std::size_t c : fdo.coords) {
    const auto i = static_cast<Eigen::Index>(c);
    const double rel_fp = std::abs(fp.gradient(i) - fd.gradient(i)) / std::abs(fd.gradient(i));
    const double allowed = std::max(5e-2 * std::abs(fd.gradient(i)), 3.0 * mc.standard_errors(i));
    const double mc_err = std::abs(mc.gradient(i) - fd.gradient(i));
    ok = ok && rel_fp <= 1e-4 && mc_err <= allowed;
    detail += (detail.empty() ? "" : "; ") + std::string("theta_") + std::to_string(c + 1) + ": FD " + fmt(fd.gradient(i)) +
              ", FP rel err " + fmt(rel_fp) + ", MC " + fmt(mc.gradient(i)) + " +/- " + fmt(mc.standard_errors(i)) +
              " (|err| " + fmt(mc_err) + " <= " + fmt(allowed) + ")";
  }
  detail += "; T = " + std::to_string(mc.horizon) + ", M = " + std::to_string(mc.replications);
  return {ok, detail};
}

ExperimentReport consistency_run() {
  return run_consistency_experiment(canonical_scenario(), ExperimentConfig{});
}

Verdict consistency_ladder() {
  const ExperimentConfig cfg;
  const ExperimentReport rep = consistency_run();
  const auto& ladder = cfg.consistency.ladder;
  const auto mass = medians_by_n(rep.table, "mass_outside_eps0.2", ladder);
  const auto l1_low = medians_by_n(rep.table, "l1_low", ladder);
  const auto l1_high = medians_by_n(rep.table, "l1_high", ladder);
  const auto gap = medians_by_n(rep.table, "value_gap_sup", ladder);
  const bool ok = nonincreasing(mass) && nonincreasing(l1_low) && nonincreasing(l1_high) && nonincreasing(gap) &&
                  mass.back() < 0.05;
  return {ok, "medians over " + std::to_string(cfg.consistency.replications) + " reps at N = [100, 400, 1600]: mass(eps=0.2) " +
                  join(mass) + ", L1 low " + join(l1_low) + ", L1 high " + join(l1_high) + ", sup value gap " + join(gap)};
}

Verdict exp_decay() {
  const ExperimentReport rep = run_exp_decay_check(canonical_scenario(), ExperimentConfig{});
  const auto* slope = rep.gate("expdecay.slope_negative");
  const auto* env = rep.gate("expdecay.below_envelope_beyond_N0");
  // recompute the envelope verdict from the table
  const std::size_t cn = col(rep.table, "n"), cl = col(rep.table, "log_sup_density"), ce = col(rep.table, "log_envelope");
  const auto n0 = rep.metrics.count("N0") ? rep.metrics.at("N0") : -1.0;
  bool beyond = n0 >= 0.0;
  for (const auto& row : rep.table.rows)
    if (n0 >= 0.0 && std::stod(row[cn]) >= n0 && std::stod(row[cl]) > std::stod(row[ce])) beyond = false;
  const bool ok = slope && env && rep.metrics.at("slope") < 0.0 && beyond;
  return {ok, "slope " + fmt(rep.metrics.at("slope")) + " (envelope slope " + fmt(rep.metrics.at("envelope_slope")) + "), " +
                  (n0 >= 0.0 ? "N0 = " + fmt(n0) : std::string("no N0 in ladder")) + ", kappa " + fmt(rep.metrics.at("kappa"))};
}

Verdict uniform_lln() {
  const ExperimentConfig cfg;
  const ExperimentReport rep = run_uniform_lln_check(canonical_scenario(), cfg);
  const auto& ladder = cfg.ulln.ladder;
  const auto med = medians_by_n(rep.table, "sup_gap", ladder);
  bool decreasing = true;
  for (std::size_t i = 1; i < med.size(); ++i) decreasing = decreasing && med[i] < med[i - 1];
  std::vector<double> f4;
  std::string pairs;
  bool band = true;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    for (std::size_t j = i + 1; j < ladder.size(); ++j) {
      if (ladder[j] != 4 * ladder[i]) continue;
      const double f = med[i] / med[j];
      band = band && f >= 1.2 && f <= 1.8;
      pairs += (pairs.empty() ? "" : ", ") + std::to_string(ladder[i]) + "->" + std::to_string(ladder[j]) + ": " + fmt(f);
    }
  }
  band = band && !pairs.empty();
  return {decreasing && band, "median sup-gap " + join(med) + (decreasing ? " decreasing" : " NOT decreasing") +
                                  "; shrink per 4x N " + pairs + " (band [1.2, 1.8])"};
}

Verdict bernstein_von_mises() {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg;
  const ExperimentReport rep = run_bvm_experiment(canonical_scenario(), cfg);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  const std::size_t ce = col(rep.table, "scaled_error");
  std::vector<double> e;
  for (const auto& row : rep.table.rows) e.push_back(std::stod(row[ce]));
  const double M = static_cast<double>(e.size());
  double mean = 0.0;
  for (double x : e) mean += x;
  mean /= M;
  double var = 0.0;
  for (double x : e) var += (x - mean) * (x - mean);
  var /= (M - 1.0);
  const double sigma_sq = rep.metrics.at("sigma_sq");
  const double bound = 3.0 * std::sqrt(var / M);
  const double ratio = var / sigma_sq;
  const bool mean_ok = std::abs(mean) <= bound;
  const bool var_ok = ratio >= 0.6 && ratio <= 1.6;
  const double ks = ks_distance_normal(e, std::sqrt(sigma_sq));
  return {mean_ok && var_ok && minutes < 60.0,
          "M = " + std::to_string(e.size()) + ", N = " + std::to_string(cfg.bvm.n) + ": mean " + fmt(mean) +
              (mean_ok ? " within " : " OUTSIDE ") + "3 SE = " + fmt(bound) + "; variance " + fmt(var) + " / sigma^2 " +
              fmt(sigma_sq) + " = " + fmt(ratio) + (var_ok ? " in" : " NOT in") + " [0.6, 1.6]; KS " + fmt(ks) +
              " (reported); " + fmt(minutes) + " min"};
}

Verdict asymptotic_gap_trend() {
  const ExperimentConfig cfg;
  const ExperimentReport rep = consistency_run();
  const auto med = medians_by_n(rep.table, "asymptotic_gap", cfg.consistency.ladder, true);
  return {nonincreasing(med), "median |asymptotic gap| at N = [100, 400, 1600]: " + join(med)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / ("bayesoc_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg = root / "small.cfg";
  {
    std::ofstream out(cfg);
    out << R"({"experiment": {
      "consistency": {"ladder": [50, 200], "replications": 2, "grid_points": 11},
      "expdecay": {"ladder": [50, 100], "replications": 2, "grid_points": 11},
      "ulln": {"ladder": [50, 200], "replications": 2, "grid_points": 11},
      "bvm": {"n": 200, "replications": 3, "grid_points": 21}}})";
  }
  auto run = [&](const fs::path& out) {
    std::vector<std::string> args{"bayesoc", "run-all", "--config", cfg.string(), "--seed", "7", "--out", out.string()};
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::streambuf* saved = std::cout.rdbuf();
    std::ostringstream sink;
    std::cout.rdbuf(sink.rdbuf());
    const int rc = cli_main(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(saved);
    return rc;
  };
  const int rc1 = run(root / "a");
  const int rc2 = run(root / "b");
  bool same = rc1 == 0 && rc2 == 0;
  std::string detail;
  for (const char* f : {"consistency.csv", "expdecay.csv", "ulln.csv", "bvm.csv", "sensitivity.csv", "summary.txt"}) {
    const std::string a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    same = same && !a.empty() && a == b;
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(a)));
    detail += (detail.empty() ? "" : ", ") + std::string(f) + " " + hex + (a == b ? "" : " DIFFERS");
  }
  fs::remove_all(root);
  return {same, "two runs, seed 7: " + detail};
}

struct Criterion {
  int id;
  const char* name;
  Verdict (*run)();
};

const Criterion kCriteria[] = {
    {1, "contraction_monotonicity_shift", contraction_suite},
    {2, "closed_form_constant_cost", closed_form_value},
    {3, "grid_vs_conjugate_posterior", posterior_oracle},
    {4, "score_and_fisher_identities", score_fisher},
    {5, "gradient_cross_validation", gradient_cross_validation},
    {6, "consistency_ladder", consistency_ladder},
    {7, "exponential_decay", exp_decay},
    {8, "uniform_lln", uniform_lln},
    {9, "bernstein_von_mises", bernstein_von_mises},
    {10, "asymptotic_gap_medians", asymptotic_gap_trend},
    {11, "determinism", determinism},
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--only k]\n";
      return 2;
    }
  }
  int failures = 0;
  for (const auto& c : kCriteria) {
    if (only != 0 && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (v.passed ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << v.detail << " ("
              << fmt(secs) << " s)" << std::endl;
    if (!v.passed) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
