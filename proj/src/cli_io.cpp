#include "bayesoc/cli_io.hpp"

#include <charconv>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "bayesoc/error.hpp"
#include "bayesoc/format.hpp"

namespace bayesoc {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

// Strict view of one JSON object: every key must be consumed before finish().
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError((path_.empty() ? std::string("config") : path_) + ": " + what);
  }
  [[noreturn]] void fail_key(const std::string& key, const std::string& what) const {
    throw ValidationError(key_path(key) + ": " + what);
  }
  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) out = as_double(*v, key_path(key));
  }
  void size(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) out = as_size(*v, key_path(key));
  }
  void u64(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) out = as_size(*v, key_path(key));
  }
  void boolean(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail_key(key, "expected true or false");
      out = v->get<bool>();
    }
  }
  void string(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail_key(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  void numbers(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) out = as_doubles(*v, key_path(key));
  }
  void sizes(const std::string& key, std::vector<std::size_t>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail_key(key, "expected an array of non-negative integers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) out.push_back(as_size((*v)[i], key_path(key) + "[" + std::to_string(i) + "]"));
    }
  }
  void matrix(const std::string& key, std::vector<std::vector<double>>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail_key(key, "expected an array of arrays");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) out.push_back(as_doubles((*v)[i], key_path(key) + "[" + std::to_string(i) + "]"));
    }
  }
  void strings(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail_key(key, "expected an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) fail_key(key, "expected an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }
  void booleans(const std::string& key, std::vector<bool>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail_key(key, "expected an array of booleans");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_boolean()) fail_key(key, "expected an array of booleans");
        out.push_back(e.get<bool>());
      }
    }
  }
  std::optional<Reader> child(const std::string& key) {
    if (const json* v = find(key)) return Reader(*v, key_path(key));
    return std::nullopt;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) {
        throw ValidationError("unknown key '" + item.key() + "' in " + (path_.empty() ? std::string("config") : path_));
      }
    }
  }

  static double as_double(const json& v, const std::string& where) {
    if (!v.is_number()) throw ValidationError(where + ": expected a number");
    return v.get<double>();
  }
  static std::uint64_t as_size(const json& v, const std::string& where) {
    if (!v.is_number_unsigned()) throw ValidationError(where + ": expected a non-negative integer");
    return v.get<std::uint64_t>();
  }
  static std::vector<double> as_doubles(const json& v, const std::string& where) {
    if (!v.is_array()) throw ValidationError(where + ": expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_double(v[i], where + "[" + std::to_string(i) + "]"));
    return out;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string quadrature_kind_name(QuadratureKind k) {
  switch (k) {
    case QuadratureKind::gauss_hermite: return "gauss-hermite";
    case QuadratureKind::monte_carlo: return "monte-carlo";
    case QuadratureKind::density_lattice: return "density-lattice";
  }
  return "unknown";
}

void parse_cost(Reader r, CostSpec& cost) {
  std::string name(cost_name(cost));
  r.string("name", name);
  const double c_max = cost_bound(cost);
  if (name == "inventory") {
    InventoryCost c = std::holds_alternative<InventoryCost>(cost) ? std::get<InventoryCost>(cost) : InventoryCost{};
    if (!std::holds_alternative<InventoryCost>(cost)) c.c_max = c_max;
    r.number("holding", c.holding);
    r.number("shortage", c.shortage);
    r.number("order", c.order);
    r.number("c_max", c.c_max);
    cost = c;
  } else if (name == "quadratic") {
    QuadraticCost c = std::holds_alternative<QuadraticCost>(cost) ? std::get<QuadraticCost>(cost) : QuadraticCost{};
    r.number("state_weight", c.state_weight);
    r.number("control_weight", c.control_weight);
    r.number("noise_weight", c.noise_weight);
    r.number("c_max", c.c_max);
    cost = c;
  } else if (name == "constant") {
    ConstantCost c = std::holds_alternative<ConstantCost>(cost) ? std::get<ConstantCost>(cost) : ConstantCost{};
    r.number("value", c.value);
    r.number("c_max", c.c_max);
    cost = c;
  } else if (name == "noise") {
    NoiseCost c = std::holds_alternative<NoiseCost>(cost) ? std::get<NoiseCost>(cost) : NoiseCost{};
    r.number("c_max", c.c_max);
    cost = c;
  } else {
    r.fail_key("name", "unknown cost '" + name + "' (registry: inventory, quadratic, constant, noise)");
  }
  r.finish();
}

void parse_dynamics(Reader r, DynamicsSpec& dyn) {
  std::string name(dynamics_name(dyn));
  r.string("name", name);
  if (name == "inventory") {
    dyn = InventoryDynamics{};
  } else if (name == "linear") {
    LinearDynamics d = std::holds_alternative<LinearDynamics>(dyn) ? std::get<LinearDynamics>(dyn) : LinearDynamics{};
    r.number("state_coeff", d.state_coeff);
    r.number("control_coeff", d.control_coeff);
    r.number("noise_coeff", d.noise_coeff);
    dyn = d;
  } else if (name == "static") {
    dyn = StaticDynamics{};
  } else {
    r.fail_key("name", "unknown dynamics '" + name + "' (registry: inventory, linear, static)");
  }
  r.finish();
}

void parse_quadrature(Reader r, QuadratureRule& q) {
  std::string kind = quadrature_kind_name(q.kind);
  r.string("kind", kind);
  if (kind == "gauss-hermite") q.kind = QuadratureKind::gauss_hermite;
  else if (kind == "monte-carlo") q.kind = QuadratureKind::monte_carlo;
  else if (kind == "density-lattice") q.kind = QuadratureKind::density_lattice;
  else r.fail_key("kind", "unknown quadrature '" + kind + "' (gauss-hermite, monte-carlo, density-lattice)");
  r.size("order", q.order);
  r.size("count", q.count);
  r.u64("seed", q.seed);
  r.number("step", q.step);
  r.number("span", q.span);
  r.finish();
}

void parse_scenario(Reader r, ScenarioSpec& s) {
  r.string("id", s.id);
  if (auto c = r.child("chain")) {
    c->strings("states", s.chain.states);
    c->matrix("transition", s.chain.transition);
    c->size("initial_context", s.chain.initial_context);
    c->matrix("embeddings", s.chain.embeddings);
    c->finish();
  }
  if (auto m = r.child("model")) {
    m->matrix("sigma", s.model.sigma);
    m->numbers("theta_star", s.model.theta_star);
    if (auto d = m->child("domain")) {
      d->numbers("lower", s.model.lower);
      d->numbers("upper", s.model.upper);
      d->booleans("free", s.model.free);
      d->finish();
    }
    m->finish();
  }
  if (auto p = r.child("problem")) {
    if (auto g = p->child("grid")) {
      g->numbers("lower", s.problem.grid.lower);
      g->numbers("upper", s.problem.grid.upper);
      g->sizes("points", s.problem.grid.points);
      g->finish();
    }
    p->matrix("controls", s.problem.controls);
    p->number("gamma", s.problem.gamma);
    if (auto c = p->child("cost")) parse_cost(*c, s.problem.cost);
    if (auto d = p->child("dynamics")) parse_dynamics(*d, s.problem.dynamics);
    if (auto q = p->child("quadrature")) parse_quadrature(*q, s.problem.quadrature);
    if (auto st = p->child("start")) {
      st->size("state", s.problem.start.state);
      st->size("context", s.problem.start.context);
      st->finish();
    }
    p->finish();
  }
  r.finish();
}

void parse_experiment(Reader r, ExperimentConfig& e) {
  r.u64("master_seed", e.master_seed);
  std::string method(gradient_method_name(e.gradient_method));
  r.string("gradient_method", method);
  try {
    e.gradient_method = parse_gradient_method(method);
  } catch (const ValidationError& err) {
    r.fail_key("gradient_method", err.what());
  }
  r.number("reference_tolerance", e.reference_tolerance);
  r.number("solve_tolerance", e.solve_tolerance);
  r.size("workers", e.workers);
  if (auto c = r.child("consistency")) {
    c->sizes("ladder", e.consistency.ladder);
    c->size("replications", e.consistency.replications);
    c->numbers("epsilons", e.consistency.epsilons);
    c->size("grid_points", e.consistency.grid_points);
    c->finish();
  }
  if (auto c = r.child("expdecay")) {
    c->sizes("ladder", e.expdecay.ladder);
    c->size("replications", e.expdecay.replications);
    c->number("epsilon", e.expdecay.epsilon);
    c->number("alpha", e.expdecay.alpha);
    c->number("beta", e.expdecay.beta);
    c->size("grid_points", e.expdecay.grid_points);
    c->finish();
  }
  if (auto c = r.child("ulln")) {
    c->sizes("ladder", e.ulln.ladder);
    c->size("replications", e.ulln.replications);
    c->size("grid_points", e.ulln.grid_points);
    c->finish();
  }
  if (auto c = r.child("bvm")) {
    c->size("n", e.bvm.n);
    c->size("replications", e.bvm.replications);
    c->size("grid_points", e.bvm.grid_points);
    std::vector<double> band{e.bvm.variance_band_low, e.bvm.variance_band_high};
    c->numbers("variance_band", band);
    if (band.size() != 2) c->fail_key("variance_band", "expected [low, high]");
    e.bvm.variance_band_low = band[0];
    e.bvm.variance_band_high = band[1];
    c->finish();
  }
  r.finish();
}

ojson cost_json(const CostSpec& cost) {
  ojson j;
  j["name"] = std::string(cost_name(cost));
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, InventoryCost>) {
          j["holding"] = c.holding;
          j["shortage"] = c.shortage;
          j["order"] = c.order;
        } else if constexpr (std::is_same_v<T, QuadraticCost>) {
          j["state_weight"] = c.state_weight;
          j["control_weight"] = c.control_weight;
          j["noise_weight"] = c.noise_weight;
        } else if constexpr (std::is_same_v<T, ConstantCost>) {
          j["value"] = c.value;
        }
        j["c_max"] = c.c_max;
      },
      cost);
  return j;
}

ojson dynamics_json(const DynamicsSpec& dyn) {
  ojson j;
  j["name"] = std::string(dynamics_name(dyn));
  if (const auto* d = std::get_if<LinearDynamics>(&dyn)) {
    j["state_coeff"] = d->state_coeff;
    j["control_coeff"] = d->control_coeff;
    j["noise_coeff"] = d->noise_coeff;
  }
  return j;
}

std::string line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    std::string msg = e.what();
    // nlohmann messages look like "[json.exception.parse_error.101] parse error at line 3, column 5: ..."
    const auto colon = msg.find("]");
    if (colon != std::string::npos) msg = msg.substr(colon + 2);
    if (msg.rfind("parse error at line", 0) == 0) throw ValidationError("config " + msg);
    throw ValidationError("config parse error at " + line_column(text, e.byte) + ": " + msg);
  }
  RunConfig cfg;
  Reader root(j, "");
  if (auto s = root.child("scenario")) parse_scenario(*s, cfg.scenario);
  if (auto e = root.child("experiment")) parse_experiment(*e, cfg.experiment);
  if (auto io = root.child("io")) {
    io->string("out_dir", cfg.io.out_dir);
    io->boolean("overwrite", cfg.io.overwrite);
    io->finish();
  }
  root.finish();
  build_scenario(cfg.scenario);  // validates every scenario invariant
  cfg.experiment.validate();
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

ojson resolved_config(const RunConfig& cfg) {
  const auto& s = cfg.scenario;
  ojson root;
  ojson& sc = root["scenario"];
  sc["id"] = s.id;
  sc["chain"]["states"] = s.chain.states;
  sc["chain"]["transition"] = s.chain.transition;
  sc["chain"]["initial_context"] = s.chain.initial_context;
  if (s.chain.embeddings.empty()) {
    std::vector<std::vector<double>> onehot(s.chain.states.size(), std::vector<double>(s.chain.states.size(), 0.0));
    for (std::size_t i = 0; i < onehot.size(); ++i) onehot[i][i] = 1.0;
    sc["chain"]["embeddings"] = onehot;
  } else {
    sc["chain"]["embeddings"] = s.chain.embeddings;
  }
  sc["model"]["sigma"] = s.model.sigma;
  sc["model"]["theta_star"] = s.model.theta_star;
  sc["model"]["domain"]["lower"] = s.model.lower;
  sc["model"]["domain"]["upper"] = s.model.upper;
  sc["model"]["domain"]["free"] = s.model.free;
  ojson& pr = sc["problem"];
  pr["grid"]["lower"] = s.problem.grid.lower;
  pr["grid"]["upper"] = s.problem.grid.upper;
  pr["grid"]["points"] = s.problem.grid.points;
  pr["controls"] = s.problem.controls;
  pr["gamma"] = s.problem.gamma;
  pr["cost"] = cost_json(s.problem.cost);
  pr["dynamics"] = dynamics_json(s.problem.dynamics);
  const auto& q = s.problem.quadrature;
  pr["quadrature"] = {{"kind", quadrature_kind_name(q.kind)}, {"order", q.order}, {"count", q.count},
                      {"seed", q.seed}, {"step", q.step}, {"span", q.span}};
  pr["start"] = {{"state", s.problem.start.state}, {"context", s.problem.start.context}};

  const auto& e = cfg.experiment;
  ojson& ex = root["experiment"];
  ex["master_seed"] = e.master_seed;
  ex["gradient_method"] = std::string(gradient_method_name(e.gradient_method));
  ex["reference_tolerance"] = e.reference_tolerance;
  ex["solve_tolerance"] = e.solve_tolerance;
  ex["workers"] = e.workers;
  ex["consistency"] = {{"ladder", e.consistency.ladder}, {"replications", e.consistency.replications},
                       {"epsilons", e.consistency.epsilons}, {"grid_points", e.consistency.grid_points}};
  ex["expdecay"] = {{"ladder", e.expdecay.ladder}, {"replications", e.expdecay.replications},
                    {"epsilon", e.expdecay.epsilon}, {"alpha", e.expdecay.alpha}, {"beta", e.expdecay.beta},
                    {"grid_points", e.expdecay.grid_points}};
  ex["ulln"] = {{"ladder", e.ulln.ladder}, {"replications", e.ulln.replications}, {"grid_points", e.ulln.grid_points}};
  ex["bvm"] = {{"n", e.bvm.n}, {"replications", e.bvm.replications}, {"grid_points", e.bvm.grid_points},
               {"variance_band", {e.bvm.variance_band_low, e.bvm.variance_band_high}}};
  root["io"] = {{"out_dir", cfg.io.out_dir}, {"overwrite", cfg.io.overwrite}};
  return root;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write '" + path.string() + "'");
  if (data.seed) out << "# seed: " << *data.seed << '\n';
  if (data.theta_star) {
    out << "# theta_star: ";
    for (Eigen::Index i = 0; i < data.theta_star->size(); ++i) out << (i ? "," : "") << format_double((*data.theta_star)(i));
    out << '\n';
  }
  out << "t,eta";
  for (std::size_t r = 0; r < data.dim; ++r) out << ",xi_" << r + 1;
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << i + 1 << ',' << data.contexts[i];
    for (double v : data.xi_at(i)) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw RuntimeFailure("failed writing '" + path.string() + "'");
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  while (e > b && e[-1] == ' ') --e;
  if (b < e && *b == '+') ++b;
  const auto res = std::from_chars(b, e, out);
  return res.ec == std::errc() && res.ptr == e;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path, const ContextChain* chain,
                     std::optional<std::size_t> expected_dim) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset '" + path.string() + "'");
  Dataset data;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header) {
      if (line.empty()) continue;
      if (line[0] == '#') {
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        std::string key = line.substr(1, colon - 1);
        key.erase(0, key.find_first_not_of(' '));
        key.erase(key.find_last_not_of(' ') + 1);
        const std::string value = line.substr(colon + 1);
        if (key == "seed") {
          std::uint64_t s = 0;
          if (!parse_number(value, s)) throw ValidationError("dataset line " + std::to_string(lineno) + ": bad seed");
          data.seed = s;
        } else if (key == "theta_star") {
          const auto parts = split_csv(value);
          Eigen::VectorXd t(static_cast<Eigen::Index>(parts.size()));
          for (std::size_t i = 0; i < parts.size(); ++i) {
            if (!parse_number(parts[i], t(static_cast<Eigen::Index>(i)))) {
              throw ValidationError("dataset line " + std::to_string(lineno) + ": bad theta_star");
            }
          }
          data.theta_star = t;
        }
        continue;
      }
      const auto cols = split_csv(line);
      if (cols.size() < 3 || cols[0] != "t" || cols[1] != "eta") {
        throw ValidationError("dataset header must be t,eta,xi_1,...,xi_d");
      }
      for (std::size_t r = 2; r < cols.size(); ++r) {
        if (cols[r] != "xi_" + std::to_string(r - 1)) {
          throw ValidationError("dataset header column " + std::to_string(r + 1) + " must be xi_" + std::to_string(r - 1));
        }
      }
      data.dim = cols.size() - 2;
      have_header = true;
      continue;
    }
    if (line.empty()) continue;
    const std::size_t row = data.size() + 1;
    const std::string where = "dataset row " + std::to_string(row) + " (line " + std::to_string(lineno) + ")";
    const auto cells = split_csv(line);
    if (cells.size() != data.dim + 2) {
      throw ValidationError(where + ": expected " + std::to_string(data.dim + 2) + " fields, got " +
                            std::to_string(cells.size()));
    }
    std::size_t t = 0, eta = 0;
    if (!parse_number(cells[0], t)) throw ValidationError(where + ": t is not a positive integer");
    if (t != row) throw ValidationError(where + ": t = " + std::to_string(t) + ", expected " + std::to_string(row));
    if (!parse_number(cells[1], eta)) throw ValidationError(where + ": eta is not a context index");
    if (chain != nullptr && eta >= chain->size()) {
      throw ValidationError(where + ": eta index " + std::to_string(eta) + " out of range (chain has " +
                            std::to_string(chain->size()) + " contexts)");
    }
    std::vector<double> xi(data.dim);
    for (std::size_t r = 0; r < data.dim; ++r) {
      if (!parse_number(cells[2 + r], xi[r]) || !std::isfinite(xi[r])) {
        throw ValidationError(where + ": xi_" + std::to_string(r + 1) + " is not a finite number");
      }
    }
    data.push_back(eta, xi);
  }
  if (!have_header) throw ValidationError("dataset '" + path.string() + "' has no header");
  if (expected_dim && *expected_dim != data.dim) {
    throw ValidationError("dataset xi dimension " + std::to_string(data.dim) + " does not match model dimension " +
                          std::to_string(*expected_dim));
  }
  return data;
}

CsvTable posterior_table(const GridPosterior& posterior) {
  CsvTable t;
  for (std::size_t i = 0; i < posterior.dim(); ++i) t.header.push_back("theta_" + std::to_string(i + 1));
  t.header.push_back("log_weight");
  for (std::size_t k = 0; k < posterior.size(); ++k) {
    std::vector<std::string> row;
    for (double v : posterior.theta_span(k)) row.push_back(format_double(v));
    row.push_back(format_double(posterior.log_weights()[k]));
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable value_table(const ControlProblem& problem, const ValueTable& v) {
  CsvTable t;
  t.header = {"x_index", "eta_index", "value"};
  for (std::size_t s = 0; s < problem.num_states(); ++s) {
    for (std::size_t h = 0; h < problem.num_contexts(); ++h) {
      t.rows.push_back({std::to_string(s), std::to_string(h), format_double(v(s, h))});
    }
  }
  return t;
}

CsvTable policy_table(const ControlProblem& problem, const PolicyTable& policy) {
  CsvTable t;
  t.header = {"x_index", "eta_index", "control_index"};
  for (std::size_t s = 0; s < problem.num_states(); ++s) {
    for (std::size_t h = 0; h < problem.num_contexts(); ++h) {
      t.rows.push_back({std::to_string(s), std::to_string(h), std::to_string(policy(s, h))});
    }
  }
  return t;
}

CsvTable sensitivity_table(const std::string& scenario_id, const std::vector<GradientResult>& gradients,
                           const BvmVariance& variance, GradientMethod variance_method) {
  CsvTable t;
  t.header = {"scenario", "method", "quantity", "coordinate", "value", "standard_error"};
  for (const auto& g : gradients) {
    const std::string m(gradient_method_name(g.method));
    for (Eigen::Index i = 0; i < g.gradient.size(); ++i) {
      const std::string se = g.standard_errors.size() > i ? format_double(g.standard_errors(i)) : "";
      t.rows.push_back({scenario_id, m, "gradient", "theta_" + std::to_string(i + 1), format_double(g.gradient(i)), se});
    }
  }
  t.rows.push_back({scenario_id, std::string(gradient_method_name(variance_method)), "sigma_sq", "",
                    format_double(variance.sigma_sq), ""});
  t.rows.push_back({scenario_id, std::string(gradient_method_name(variance_method)), "fisher_min_eig", "",
                    format_double(variance.fisher_min_eig), ""});
  return t;
}

void write_output(const std::filesystem::path& path, const std::string& content, bool overwrite) {
  if (std::filesystem::exists(path) && !overwrite) {
    throw ValidationError("refusing to overwrite '" + path.string() + "' (pass --force)");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw RuntimeFailure("failed writing '" + path.string() + "'");
}

namespace {

std::string table_text(const CsvTable& t) {
  std::ostringstream os;
  t.write(os);
  return os.str();
}

void preflight(const std::vector<std::filesystem::path>& paths, bool overwrite) {
  if (overwrite) return;
  for (const auto& p : paths) {
    if (std::filesystem::exists(p)) throw ValidationError("refusing to overwrite '" + p.string() + "' (pass --force)");
  }
}

struct CommonOptions {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
  std::size_t workers = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* workers_opt = nullptr;
};

RunConfig load_run_config(const CommonOptions& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : parse_config(o.config);
  if (o.seed_opt != nullptr && o.seed_opt->count() > 0) cfg.experiment.master_seed = o.seed;
  if (o.workers_opt != nullptr && o.workers_opt->count() > 0) cfg.experiment.workers = o.workers;
  if (!o.out.empty()) cfg.io.out_dir = o.out;
  if (o.force) cfg.io.overwrite = true;
  cfg.experiment.validate();
  return cfg;
}

std::filesystem::path out_path(const RunConfig& cfg, const std::string& name) {
  return std::filesystem::path(cfg.io.out_dir) / name;
}

int run_experiments(const RunConfig& cfg, const std::vector<std::string>& which) {
  const Scenario scenario = build_scenario(cfg.scenario);
  std::vector<std::filesystem::path> outputs{out_path(cfg, "summary.txt"), out_path(cfg, "resolved_config.json")};
  for (const auto& w : which) outputs.push_back(out_path(cfg, w + ".csv"));
  const bool with_bvm = std::find(which.begin(), which.end(), "bvm") != which.end();
  if (with_bvm) outputs.push_back(out_path(cfg, "sensitivity.csv"));
  preflight(outputs, cfg.io.overwrite);

  std::vector<ExperimentReport> reports;
  for (const auto& w : which) {
    if (w == "consistency") reports.push_back(run_consistency_experiment(scenario, cfg.experiment));
    else if (w == "expdecay") reports.push_back(run_exp_decay_check(scenario, cfg.experiment));
    else if (w == "ulln") reports.push_back(run_uniform_lln_check(scenario, cfg.experiment));
    else if (w == "bvm") reports.push_back(run_bvm_experiment(scenario, cfg.experiment));
  }
  for (const auto& rep : reports) {
    write_output(out_path(cfg, rep.name + ".csv"), table_text(rep.table), true);
  }
  if (with_bvm) {
    const ReferenceSolution ref = solve_reference(scenario, cfg.experiment.reference_tolerance);
    std::vector<GradientResult> grads;
    grads.push_back(fixed_point_gradient(scenario.problem, scenario.theta_star, ref.policy, scenario.start));
    FiniteDifferenceOptions fd;
    fd.coords = scenario.problem.domain().free_indices();
    grads.push_back(finite_difference_gradient(scenario.problem, scenario.theta_star, ref.policy, scenario.start, fd));
    McGradientOptions mc;
    mc.seed = derive_seed(cfg.experiment.master_seed, 0, 200);
    mc.workers = cfg.experiment.workers;
    grads.push_back(mc_gradient(scenario.problem, scenario.theta_star, ref.policy, scenario.start, mc));
    const BvmVariance var = bvm_variance(scenario.problem, scenario.theta_star, ref.policy, scenario.start,
                                         cfg.experiment.gradient_method, mc);
    write_output(out_path(cfg, "sensitivity.csv"),
                 table_text(sensitivity_table(scenario.id, grads, var, cfg.experiment.gradient_method)), true);
  }
  const std::string summary = summary_text(reports);
  write_output(out_path(cfg, "summary.txt"), summary, true);
  write_output(out_path(cfg, "resolved_config.json"), resolved_config(cfg).dump(2) + "\n", true);
  std::cout << summary;
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Bayesian-learning-augmented stochastic control with Markov side information"};
  app.require_subcommand(1);
  CommonOptions common;
  std::size_t n = 1000;
  std::size_t replication = 0;
  std::size_t grid_points = 0;
  std::string data_path;
  std::string mode = "true";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON config file (canonical scenario when omitted)");
    common.seed_opt = nullptr;
    auto* s = sub->add_option("--seed", common.seed, "master seed override");
    sub->add_option("--out", common.out, "output directory override");
    sub->add_flag("--force", common.force, "overwrite existing outputs");
    auto* w = sub->add_option("--workers", common.workers, "worker threads for replications")->check(CLI::PositiveNumber);
    return std::make_pair(s, w);
  };
  std::vector<std::pair<CLI::App*, std::pair<CLI::Option*, CLI::Option*>>> subs;
  auto make = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    subs.emplace_back(sub, add_common(sub));
    return sub;
  };

  CLI::App* validate = make("validate", "parse and validate a config, print the resolved config");
  CLI::App* generate = make("generate-data", "simulate a dataset under theta*");
  generate->add_option("--n", n, "number of records")->check(CLI::NonNegativeNumber);
  generate->add_option("--replication", replication, "replication index used to derive the dataset seed");
  CLI::App* fit = make("fit-posterior", "grid posterior from a dataset");
  fit->add_option("--data", data_path, "dataset CSV")->required();
  fit->add_option("--grid-points", grid_points, "grid points per free coordinate");
  CLI::App* solve = make("solve", "value iteration for the true or Bayesian Bellman equation");
  solve->add_option("--mode", mode, "true | bayes")->check(CLI::IsMember({"true", "bayes"}));
  solve->add_option("--data", data_path, "dataset CSV (bayes mode)");
  solve->add_option("--grid-points", grid_points, "grid points per free coordinate (bayes mode)");
  CLI::App* consistency = make("consistency", "posterior and value consistency ladder");
  CLI::App* expdecay = make("expdecay", "exponential decay of the posterior away from theta*");
  CLI::App* ulln = make("ulln", "uniform law of large numbers check");
  CLI::App* bvm = make("bvm", "Bernstein-von Mises Monte Carlo study");
  CLI::App* all = make("run-all", "consistency, expdecay, ulln and bvm with one summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    for (const auto& [sub, opts] : subs) {
      if (sub->parsed()) {
        common.seed_opt = opts.first;
        common.workers_opt = opts.second;
      }
    }
    const RunConfig cfg = load_run_config(common);
    if (validate->parsed()) {
      std::cout << resolved_config(cfg).dump(2) << '\n';
      return 0;
    }
    const Scenario scenario = build_scenario(cfg.scenario);
    const auto& model = scenario.problem.model();
    const auto& chain = scenario.problem.chain();
    if (generate->parsed()) {
      const auto path = out_path(cfg, "dataset.csv");
      preflight({path}, cfg.io.overwrite);
      const Dataset data = generate_dataset(chain, model, scenario.theta_star, n,
                                            replication_seed(cfg.experiment.master_seed, replication));
      std::filesystem::create_directories(cfg.io.out_dir);
      save_dataset(data, path);
      std::cout << "wrote " << data.size() << " records to " << path.string() << '\n';
      return 0;
    }
    const std::size_t m = grid_points > 0 ? grid_points : cfg.experiment.consistency.grid_points;
    if (fit->parsed()) {
      const auto path = out_path(cfg, "posterior.csv");
      preflight({path}, cfg.io.overwrite);
      const Dataset data = load_dataset(data_path, &chain, model.xi_dim());
      const GridPosterior post =
          posterior_update_batch(PriorSpec::uniform(), grid_spec(scenario, m), model, chain, data);
      write_output(path, table_text(posterior_table(post)), cfg.io.overwrite);
      const Eigen::VectorXd mean = post.mean();
      std::cout << "N = " << data.size() << ", posterior mean =";
      for (Eigen::Index i = 0; i < mean.size(); ++i) std::cout << ' ' << format_double(mean(i));
      std::cout << "\nwrote " << path.string() << '\n';
      return 0;
    }
    if (solve->parsed()) {
      const auto vpath = out_path(cfg, "value_" + mode + ".csv");
      const auto ppath = out_path(cfg, "policy_" + mode + ".csv");
      preflight({vpath, ppath}, cfg.io.overwrite);
      OperatorSpec op = TrueOperator{scenario.theta_star};
      if (mode == "bayes") {
        if (data_path.empty()) throw ValidationError("solve --mode bayes needs --data");
        const Dataset data = load_dataset(data_path, &chain, model.xi_dim());
        op = BayesOperator{
            posterior_update_batch(PriorSpec::uniform(), grid_spec(scenario, m), model, chain, data).mixture()};
      }
      const BackupModel bm = BackupModel::for_operator(scenario.problem, op);
      SolveOptions so;
      so.tolerance = mode == "bayes" ? cfg.experiment.solve_tolerance : cfg.experiment.reference_tolerance;
      const SolveResult res = value_iteration(bm, so);
      if (!res.report.converged) throw RuntimeFailure("not converged after " + std::to_string(res.report.iterations) + " iterations");
      ValueTable tmp;
      PolicyTable pol(bm.states(), bm.contexts());
      bm.apply(res.values, tmp, &pol);
      write_output(vpath, table_text(value_table(scenario.problem, res.values)), cfg.io.overwrite);
      write_output(ppath, table_text(policy_table(scenario.problem, pol)), cfg.io.overwrite);
      std::cout << "V(x1, eta1) = " << format_double(res.values(scenario.start.state, scenario.start.context))
                << " after " << res.report.iterations << " iterations, residual "
                << format_double(res.report.final_residual) << "\nwrote " << vpath.string() << ", " << ppath.string()
                << '\n';
      return 0;
    }
    if (consistency->parsed()) return run_experiments(cfg, {"consistency"});
    if (expdecay->parsed()) return run_experiments(cfg, {"expdecay"});
    if (ulln->parsed()) return run_experiments(cfg, {"ulln"});
    if (bvm->parsed()) return run_experiments(cfg, {"bvm"});
    if (all->parsed()) return run_experiments(cfg, {"consistency", "expdecay", "ulln", "bvm"});
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const RuntimeFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace bayesoc
