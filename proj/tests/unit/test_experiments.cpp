#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "kspoc/config.hpp"
#include "kspoc/experiments.hpp"
#include "kspoc/io.hpp"

using namespace kspoc;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = KSPOC_FIXTURES_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("kspoc_test_" + name);
  fs::remove_all(p);
  return p;
}

Table poc_table(std::vector<double> n, std::vector<double> dev) {
  Table t("test", {"N", "sup_dev", "se"});
  for (std::size_t k = 0; k < n.size(); ++k) t.add({n[k], dev[k], 0.0});
  return t;
}

const Verdict& find(const std::vector<Verdict>& vs, const std::string& name) {
  for (const auto& v : vs)
    if (v.name == name) return v;
  throw std::runtime_error("no verdict " + name);
}

}  // namespace

TEST(Verdicts, PocRate) {
  const auto ok = poc_finite_verdicts(poc_table({32, 64, 128, 256}, {0.08, 0.04, 0.02, 0.01}));
  EXPECT_TRUE(find(ok, "poc_rate").passed);
  const auto flat = poc_finite_verdicts(poc_table({32, 64, 128, 256}, {0.08, 0.07, 0.075, 0.08}));
  EXPECT_FALSE(find(flat, "poc_rate").passed);
  const auto zero = poc_finite_verdicts(poc_table({32, 64, 128}, {0, 0, 0}));
  EXPECT_TRUE(zero[0].passed);
  EXPECT_NE(zero[0].detail.find("decoupled"), std::string::npos);
  const auto single = poc_finite_verdicts(poc_table({64}, {0.02}));
  EXPECT_TRUE(single[0].passed);
  EXPECT_NE(single[0].detail.find("table only"), std::string::npos);
}

TEST(Verdicts, PocUniform) {
  Table t("test", {"t", "mean", "se"});
  for (int k = 0; k <= 100; ++k) t.add({k * 0.2, 0.01 * (1 - std::exp(-k * 0.2)), 0.0});
  const auto v = poc_uniform_verdicts(t, 128, 3.0, 4.0);
  EXPECT_TRUE(find(v, "plateau").passed);
  EXPECT_TRUE(find(v, "bound").passed);
  EXPECT_FALSE(find(poc_uniform_verdicts(t, 128, 0.1, 1.0), "bound").passed);
  EXPECT_FALSE(find(poc_uniform_verdicts(t, 128, std::nullopt, 4.0), "bound").passed);

  Table growing("test", {"t", "mean", "se"});
  for (int k = 0; k <= 100; ++k) growing.add({k * 0.2, 0.001 * k * k, 0.0});
  EXPECT_FALSE(find(poc_uniform_verdicts(growing, 128, 3.0, 4.0), "plateau").passed);
}

TEST(Verdicts, EulerRate) {
  Table t("test", {"epsilon", "mse_early", "mse_late"});
  for (double e : {0.04, 0.02, 0.01, 0.005}) t.add({e, 0.3 * e, 0.35 * e});
  LinearFit early, late;
  const auto v = euler_rate_verdicts(t, &early, &late);
  EXPECT_NEAR(early.slope, 1.0, 1e-12);
  EXPECT_TRUE(find(v, "euler_rate_early").passed);
  EXPECT_TRUE(find(v, "euler_rate_late").passed);
  EXPECT_TRUE(find(v, "euler_uniform").passed);

  Table sq("test", {"epsilon", "mse_early", "mse_late"});
  for (double e : {0.04, 0.02, 0.01}) sq.add({e, e * e, 3 * e * e});
  const auto w = euler_rate_verdicts(sq);
  EXPECT_FALSE(find(w, "euler_rate_early").passed);
  EXPECT_FALSE(find(w, "euler_uniform").passed);
}

TEST(Verdicts, Concentration) {
  Table t("test", {"time_label", "N", "epsilon", "exceed", "replications", "tail", "lower", "upper"});
  for (double n : {16.0, 32.0, 64.0}) {
    for (double e : {0.1, 0.2}) {
      const double p = std::exp(-2 * n * e * e);
      const double k = std::round(200 * p);
      t.add({"finite", n, e, k, 200.0, k / 200, std::max(0.0, k / 200 - 0.05), k / 200 + 0.05});
    }
  }
  const auto v = concentration_verdicts(t);
  EXPECT_TRUE(find(v, "tail_monotone_finite").passed);
  EXPECT_TRUE(find(v, "tail_exponent_finite").passed);

  Table bad("test", {"time_label", "N", "epsilon", "exceed", "replications", "tail", "lower", "upper"});
  bad.add({"finite", 16.0, 0.1, 20.0, 200.0, 0.1, 0.06, 0.15});
  bad.add({"finite", 32.0, 0.1, 100.0, 200.0, 0.5, 0.43, 0.57});
  EXPECT_FALSE(find(concentration_verdicts(bad), "tail_monotone_finite").passed);
  EXPECT_DOUBLE_EQ(corrected_tail(0, 199), 0.5 / 200);
}

TEST(Verdicts, Stability) {
  std::vector<double> flat(100, 1.2);
  EXPECT_DOUBLE_EQ(stability_ratio(flat), 1.0);
  EXPECT_TRUE(stability_verdict(flat).passed);
  std::vector<double> grow(100);
  for (int k = 0; k < 100; ++k) grow[k] = 1.0 + k;
  EXPECT_FALSE(stability_verdict(grow).passed);
}

TEST(Verdicts, FieldMonitor) {
  MonitorReport m;
  m.evaluations = 10;
  EXPECT_TRUE(field_monitor_verdict(m).passed);
  m.grad_violations = 1;
  EXPECT_FALSE(field_monitor_verdict(m).passed);
}

TEST(Config, TomlJsonRoundTrip) {
  const ScenarioConfig a = load_scenario(fs::path(KSPOC_SOURCE_DIR) / "configs" / "concentration.toml");
  EXPECT_EQ(a.experiment, ExperimentKind::concentration);
  EXPECT_EQ(a.sweep.replications, 200u);
  EXPECT_EQ(a.n_steps(), 500u);
  const std::string j = scenario_to_json(a);
  const ScenarioConfig b = parse_scenario_json(j);
  EXPECT_EQ(scenario_to_json(b), j);
  EXPECT_EQ(b.sweep.thresholds, a.sweep.thresholds);
}

TEST(Config, AllShippedConfigsValidate) {
  for (const auto& e : fs::directory_iterator(fs::path(KSPOC_SOURCE_DIR) / "configs")) {
    if (e.path().extension() != ".toml") continue;
    EXPECT_NO_THROW(load_scenario(e.path()).validate()) << e.path();
  }
}

TEST(Config, Refusals) {
  try {
    load_scenario(kFixtures / "unknown_key.toml");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("particles"), std::string::npos);
  }
  EXPECT_THROW(load_scenario(kFixtures / "missing.toml"), ConfigError);
  EXPECT_THROW(parse_scenario_toml("seed = ["), ConfigError);
  EXPECT_THROW(parse_scenario_toml("[run]\nepsilon = 0.03\nhorizon = 1.0\n").n_steps(), ConfigError);
  EXPECT_THROW(parse_experiment_kind("sweep"), ConfigError);
  EXPECT_EQ(parse_experiment_kind("poc-finite"), ExperimentKind::poc_finite);
  EXPECT_THROW(load_scenario(kFixtures / "few_replications.toml").validate(), ConfigError);
}

TEST(Experiments, WeakConfinementIsRefusedWithReport) {
  const ScenarioConfig sc = load_scenario(kFixtures / "weak_confinement.toml");
  try {
    run_experiment(sc);
    FAIL();
  } catch (const AssumptionError& e) {
    EXPECT_FALSE(e.report().satisfied);
    EXPECT_LT(e.report().margin, 0.0);
  }
}

TEST(Experiments, LargeStepIsRefused) {
  EXPECT_THROW(run_experiment(load_scenario(kFixtures / "large_step.toml")), ConfigError);
}

TEST(Experiments, SimulateWritesOutputsAndManifest) {
  const ScenarioConfig sc = load_scenario(kFixtures / "tiny_simulate.toml");
  const ExperimentResult r = run_experiment(sc);
  EXPECT_TRUE(r.passed());
  const fs::path dir = scratch("simulate");
  write_outputs(r, sc, dir, utc_timestamp(), 1);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "trajectory.csv"));
  const Table moments = read_csv(dir / r.results_file);
  EXPECT_EQ(moments.rows.size(), 51u);
  EXPECT_EQ(scenario_to_json(scenario_from_manifest(dir / "manifest.json")), scenario_to_json(sc));
  fs::remove_all(dir);
}

TEST(Experiments, PocFiniteSmallRun) {
  const ScenarioConfig sc = load_scenario(kFixtures / "tiny_poc_finite.toml");
  const ExperimentResult r = run_experiment(sc);
  const auto dev = r.results.column("sup_dev");
  ASSERT_EQ(dev.size(), 3u);
  for (double d : dev) EXPECT_GT(d, 0.0);
  EXPECT_FALSE(r.verdicts.empty());
  EXPECT_EQ(r.child_seeds.size(), 4u);
}

TEST(Experiments, PocFiniteDecoupled) {
  ScenarioConfig sc = load_scenario(kFixtures / "tiny_poc_finite.toml");
  sc.model.params.chi = 0.0;
  const ExperimentResult r = run_experiment(sc);
  for (double d : r.results.column("sup_dev")) EXPECT_EQ(d, 0.0);
  EXPECT_NE(r.verdicts[0].detail.find("decoupled"), std::string::npos);
}

TEST(Experiments, ConstantsJson) {
  const std::string j = constants_to_json(default_instance());
  EXPECT_NE(j.find("\"lambda\""), std::string::npos);
  EXPECT_NE(j.find("assumption"), std::string::npos);
}
