#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bayesoc/experiments.hpp"
#include "bayesoc/posterior.hpp"

namespace bayesoc {

struct IoConfig {
  std::string out_dir = "out";
  bool overwrite = false;
};

struct RunConfig {
  ScenarioSpec scenario = canonical_scenario_spec();
  ExperimentConfig experiment;
  IoConfig io;
};

// Strict JSON config: unknown keys are rejected, missing keys take the
// canonical defaults. Syntax errors report line and column; validation
// errors name the key path. Both throw ValidationError.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config(const std::filesystem::path& path);
// Every field with defaults filled in; parse_config_text(resolved.dump())
// reproduces the same run.
nlohmann::ordered_json resolved_config(const RunConfig& config);

// CSV `t,eta,xi_1,...,xi_d`, t = 1..N. Leading `# key: value` lines carry
// provenance (seed, theta_star).
void save_dataset(const Dataset& data, const std::filesystem::path& path);
// When `chain` is given, context indices are validated against it; when
// `expected_dim` is given, the xi dimension must match.
Dataset load_dataset(const std::filesystem::path& path, const ContextChain* chain = nullptr,
                     std::optional<std::size_t> expected_dim = std::nullopt);

// theta_1..theta_p,log_weight
CsvTable posterior_table(const GridPosterior& posterior);
// x_index[,y_index],eta_index,value / control_index
CsvTable value_table(const ControlProblem& problem, const ValueTable& v);
CsvTable policy_table(const ControlProblem& problem, const PolicyTable& policy);
// scenario,method,quantity,coordinate,value,standard_error
CsvTable sensitivity_table(const std::string& scenario_id, const std::vector<GradientResult>& gradients,
                           const BvmVariance& variance, GradientMethod variance_method);

// Writes `content` unless the file exists and overwrite is off
// (ValidationError naming the file).
void write_output(const std::filesystem::path& path, const std::string& content, bool overwrite);

// Exit codes: 0 success, 1 validation error, 2 runtime failure.
int cli_main(int argc, char** argv);

}  // namespace bayesoc
