#ifndef KSPOC_CONFIG_HPP
#define KSPOC_CONFIG_HPP

// Scenario configuration. TOML and JSON files map onto the same schema (docs/config_schema.md);
// the canonical echo stored in manifests is JSON.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kspoc/model.hpp"
#include "kspoc/simulate.hpp"

namespace kspoc {

enum class ExperimentKind { constants, simulate, poc_finite, poc_uniform, euler_rate, concentration, field_bounds };

std::string to_string(ExperimentKind k);
ExperimentKind parse_experiment_kind(std::string_view s);  // accepts "poc_finite" and "poc-finite"

struct SweepConfig {
  std::vector<std::size_t> n_values;
  std::vector<double> eps_values;
  std::vector<double> thresholds;
  std::size_t replications = 16;
  std::size_t n_ref = 4096;
  std::optional<std::uint64_t> reference_seed;  // default: derived from the master seed
  unsigned levels = 4;
  double slack = 4.0;
  double t_finite = 1.0;        // concentration: finite-horizon time
  std::size_t storage_cap_mb = 2048;
};

struct ScenarioConfig {
  ExperimentKind experiment = ExperimentKind::simulate;
  std::uint64_t seed = 1;
  ModelInstance model = default_instance();
  // Step size, particle count, grid, field method and recording options; n_steps comes from `horizon`.
  EulerConfig run;
  double horizon = 5.0;
  std::vector<double> snapshot_times;
  SweepConfig sweep;
  std::string output_dir;

  std::size_t n_steps() const;       // horizon / epsilon, ConfigError unless integral
  EulerConfig euler() const;         // run with n_steps and snapshot steps filled in
  std::size_t storage_cap_bytes() const { return sweep.storage_cap_mb << 20; }
  // Structural checks that do not depend on the experiment kind, plus per-kind sweep requirements.
  void validate() const;
};

ScenarioConfig parse_scenario_toml(std::string_view text, const std::string& origin = "<toml>");
ScenarioConfig parse_scenario_json(std::string_view text, const std::string& origin = "<json>");
// Dispatches on the extension (.toml / .json). Missing or unreadable file: ConfigError.
ScenarioConfig load_scenario(const std::filesystem::path& path);

// Canonical JSON echo; parse_scenario_json(scenario_to_json(c)) reproduces c.
std::string scenario_to_json(const ScenarioConfig& c, int indent = 2);

}  // namespace kspoc

#endif  // KSPOC_CONFIG_HPP
