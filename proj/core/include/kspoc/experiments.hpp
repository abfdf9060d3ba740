#ifndef KSPOC_EXPERIMENTS_HPP
#define KSPOC_EXPERIMENTS_HPP

// Scenario runners. Each returns its result tables plus verdicts; verdict logic is kept in
// pure functions over the tables so it can be tested on synthetic data.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kspoc/config.hpp"
#include "kspoc/errors.hpp"
#include "kspoc/io.hpp"
#include "kspoc/metrics.hpp"
#include "kspoc/model.hpp"
#include "kspoc/simulate.hpp"

namespace kspoc {

struct Verdict {
  std::string name;
  bool passed = true;
  std::string detail;
};

struct ExperimentResult {
  ExperimentKind kind = ExperimentKind::simulate;
  Table results;                                      // results.csv
  std::vector<std::pair<std::string, Table>> extra;  // further CSVs, path relative to the output directory
  std::vector<Verdict> verdicts;
  std::map<std::string, double> summary;
  std::vector<std::pair<std::string, std::uint64_t>> child_seeds;
  std::string results_file = "results.csv";

  bool passed() const;
};

// Precondition refusal carrying the Assumption A report.
class AssumptionError : public ConfigError {
 public:
  explicit AssumptionError(const AssumptionReport& report);
  const AssumptionReport& report() const { return report_; }

 private:
  AssumptionReport report_;
};

ExperimentResult run_constants(const ScenarioConfig& sc);
ExperimentResult run_simulate(const ScenarioConfig& sc);
ExperimentResult exp_poc_finite(const ScenarioConfig& sc);
ExperimentResult exp_poc_uniform(const ScenarioConfig& sc);
ExperimentResult exp_euler_rate(const ScenarioConfig& sc);
ExperimentResult exp_concentration(const ScenarioConfig& sc);
ExperimentResult exp_field_bounds(const ScenarioConfig& sc);
ExperimentResult run_experiment(const ScenarioConfig& sc);

// Constants and Assumption A report as a JSON object.
std::string constants_to_json(const ModelInstance& model, int indent = 2);

// Writes results.csv, the extra tables and manifest.json (last, atomically) into `dir`.
void write_outputs(const ExperimentResult& result, const ScenarioConfig& sc, const std::filesystem::path& dir,
                   const std::string& started, int threads);
// Config echo stored in a manifest.
ScenarioConfig scenario_from_manifest(const std::filesystem::path& manifest);

// ---- pure verdict logic

inline constexpr double kPocSlopeLow = -1.3, kPocSlopeHigh = -0.7;
inline constexpr double kEulerSlopeLow = 0.7, kEulerSlopeHigh = 1.3;
inline constexpr double kPlateauRatio = 1.5;
inline constexpr double kEulerUniformRatio = 2.0;
inline constexpr double kStabilityRatio = 2.0;
inline constexpr double kConcentrationR2 = 0.8;

// Columns N, sup_dev (and se). All-zero deviations give a single "decoupled" verdict; fewer than
// 3 N values give the table only.
std::vector<Verdict> poc_finite_verdicts(const Table& results, std::optional<LinearFit>* fit = nullptr);

// Columns t, mean. Plateau: sup over [T/2, T] <= 1.5 sup over [T/4, T/2]. Bound: N sup <= slack const^2.
std::vector<Verdict> poc_uniform_verdicts(const Table& curve, std::size_t n_particles,
                                          std::optional<double> bound_const, double slack);

// Columns epsilon, mse_early, mse_late.
std::vector<Verdict> euler_rate_verdicts(const Table& results, LinearFit* early = nullptr, LinearFit* late = nullptr);

// Columns time_label, N, epsilon, exceed, replications, tail, lower, upper. Checked per time label.
std::vector<Verdict> concentration_verdicts(const Table& results);

// Continuity-corrected tail (k + 1/2) / (R + 1), used where a log is taken.
double corrected_tail(std::size_t exceed, std::size_t replications);

// Mean of m2 over the last quarter of the series divided by the mean over the second quarter.
double stability_ratio(const std::vector<double>& m2);
Verdict stability_verdict(const std::vector<double>& m2);

Verdict field_monitor_verdict(const MonitorReport& m);

}  // namespace kspoc

#endif  // KSPOC_EXPERIMENTS_HPP
