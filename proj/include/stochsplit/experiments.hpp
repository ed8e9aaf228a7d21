#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "stochsplit/report.hpp"

namespace stochsplit {

/// Invalid or unreadable experiment configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Criterion {
  std::string name;
  double measured = 0.0;
  /// A number, or [lo, hi] for window checks.
  nlohmann::json tolerance;
  bool pass = false;
  /// Reported but not part of the exit status.
  bool diagnostic = false;
  std::string note;
};

struct ExperimentResult {
  std::string experiment;
  std::uint64_t seed = 0;
  std::vector<Criterion> criteria;
  OutputBundle files;

  bool all_pass() const;
  /// Summary document: experiment, seed, pass, and one entry per criterion
  /// with fields experiment, criterion, measured, tolerance, pass.
  nlohmann::json summary() const;
};

struct ExperimentInfo {
  std::string kind;
  std::string summary;
  std::string exercises;
  std::string parameters;
};

const std::vector<ExperimentInfo>& experiment_catalog();
std::string list_experiments();

/// Checks the document against the experiment schema. Throws ConfigError
/// naming the offending key.
void validate_config(const nlohmann::json& config);

/// Parse a config file; throws ConfigError on I/O or JSON errors.
nlohmann::json load_config(const std::string& path);

/// Validate, then run. Results are a pure function of (config, seed) and do
/// not depend on `threads`. Engine precondition failures surface as ConfigError.
ExperimentResult run_experiment(const nlohmann::json& config, int threads = 1);

struct SweepResult {
  std::vector<ExperimentResult> runs;
  /// Per criterion: cross-seed mean and sample stddev of `measured`.
  nlohmann::json aggregate;
  bool all_pass() const;
};

/// Runs the config once per seed (>= 2 seeds). Files of seed s are placed
/// under seed_<s>/ in the returned bundle, plus sweep_summary.json.
SweepResult seed_sweep(const nlohmann::json& config, std::span<const std::uint64_t> seeds, int threads = 1);
OutputBundle sweep_bundle(const SweepResult& sweep);

}  // namespace stochsplit
