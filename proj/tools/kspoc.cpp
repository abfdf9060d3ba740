// kspoc: command-line front end for the experiments.
// Exit codes: 0 all verdicts pass, 1 a verdict or run failed, 2 bad configuration or usage.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kspoc/config.hpp"
#include "kspoc/experiments.hpp"
#include "kspoc/io.hpp"
#include "kspoc/metrics.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::string manifest;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
};

int resolved_threads(const CommonOptions& o, const kspoc::ScenarioConfig& sc) {
  if (o.threads > 0) return o.threads;
  if (const char* env = std::getenv("KSPOC_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return sc.run.threads > 0 ? sc.run.threads : 1;
}

void print_verdicts(const kspoc::ExperimentResult& r) {
  for (const auto& v : r.verdicts) {
    std::cout << (v.passed ? "PASS " : "FAIL ") << v.name << ": " << v.detail << "\n";
  }
}

int run_scenario(kspoc::ExperimentKind kind, const CommonOptions& o) {
  if (o.config.empty() == o.manifest.empty()) throw kspoc::ConfigError("give exactly one of --config or --manifest");
  kspoc::ScenarioConfig sc = o.manifest.empty() ? kspoc::load_scenario(o.config)
                                                : kspoc::scenario_from_manifest(o.manifest);
  sc.experiment = kind;
  if (o.seed_set) {
    sc.seed = o.seed;
    sc.run.seed = o.seed;
  }
  const int threads = resolved_threads(o, sc);
  sc.run.threads = threads;
  const std::string started = kspoc::utc_timestamp();

  if (kind == kspoc::ExperimentKind::constants) {
    std::cout << kspoc::constants_to_json(sc.model) << "\n";
    if (o.out.empty()) return 0;
  }
  const kspoc::ExperimentResult result = kspoc::run_experiment(sc);
  std::string out = o.out;
  if (out.empty()) out = sc.output_dir.empty() ? "results/" + kspoc::to_string(kind) : sc.output_dir;
  kspoc::write_outputs(result, sc, out, started, threads);
  if (kind != kspoc::ExperimentKind::constants) {
    print_verdicts(result);
    std::cout << "outputs written to " << out << "\n";
  }
  return result.passed() ? 0 : 1;
}

std::vector<double> read_points(const std::string& path, int& dim) {
  std::ifstream in(path);
  if (!in) throw kspoc::ConfigError("cannot read point file '" + path + "'");
  std::vector<double> pts;
  std::string line;
  dim = 0;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        numeric = numeric && used == cell.size();
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;  // header
      }
      throw kspoc::ConfigError(path + ": non-numeric row '" + line + "'");
    }
    first = false;
    if (dim == 0) dim = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != dim) throw kspoc::ConfigError(path + ": rows have different lengths");
    pts.insert(pts.end(), row.begin(), row.end());
  }
  if (pts.empty()) throw kspoc::ConfigError(path + ": no points");
  return pts;
}

int run_distance(const std::string& a_path, const std::string& b_path, const std::string& method, int p,
                 std::size_t projections, std::uint64_t seed) {
  int da = 0, db = 0;
  auto a = read_points(a_path, da);
  auto b = read_points(b_path, db);
  const kspoc::EmpiricalMeasure mu(std::move(a), da), nu(std::move(b), db);
  kspoc::DistanceReport r;
  if (method == "quantile") {
    r = p == 1 ? kspoc::w1_1d(mu, nu) : kspoc::w2_1d(mu, nu);
  } else if (method == "assignment") {
    r = kspoc::wp_assignment(mu, nu, p);
  } else {
    if (p != 1) throw kspoc::ConfigError("sliced method computes W1 only");
    r = kspoc::sliced_w1(mu, nu, projections, seed);
  }
  nlohmann::json j{{"value", r.value}, {"method", kspoc::to_string(r.method)}, {"exact", r.exact}, {"p", p}};
  if (!r.exact) {
    j["n_projections"] = r.n_projections;
    j["std_error"] = r.std_error;
  }
  std::cout << j.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Particle simulation and propagation-of-chaos experiments for the parabolic-parabolic Keller-Segel model"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  CommonOptions opts;
  struct Sub {
    const char* name;
    kspoc::ExperimentKind kind;
    const char* help;
  };
  const Sub subs[] = {
      {"constants", kspoc::ExperimentKind::constants, "Print theoretical constants and the Assumption A report"},
      {"simulate", kspoc::ExperimentKind::simulate, "Run the particle system; writes trajectory.csv and moments.csv"},
      {"poc-finite", kspoc::ExperimentKind::poc_finite, "Finite-horizon propagation of chaos rate in N"},
      {"poc-uniform", kspoc::ExperimentKind::poc_uniform, "Uniform-in-time propagation of chaos"},
      {"euler-rate", kspoc::ExperimentKind::euler_rate, "Euler scheme convergence rate in epsilon"},
      {"concentration", kspoc::ExperimentKind::concentration, "Tail probabilities of W1 between empirical measures"},
      {"field-bounds", kspoc::ExperimentKind::field_bounds, "Field gradient and Lipschitz bound monitors"},
  };
  std::vector<std::pair<CLI::App*, kspoc::ExperimentKind>> scenario_cmds;
  for (const auto& s : subs) {
    CLI::App* cmd = app.add_subcommand(s.name, s.help);
    cmd->add_option("--config,-c", opts.config, "Scenario config (.toml or .json)");
    cmd->add_option("--manifest", opts.manifest, "Re-run the configuration echoed in a manifest.json");
    cmd->add_option("--out,-o", opts.out, "Output directory");
    cmd->add_option("--seed", opts.seed, "Master seed (overrides the config)")->each([&](const std::string&) {
      opts.seed_set = true;
    });
    cmd->add_option("--threads", opts.threads, "Worker count (overrides KSPOC_THREADS and the config)")
        ->check(CLI::PositiveNumber);
    scenario_cmds.emplace_back(cmd, s.kind);
  }

  std::string a_path, b_path, method = "quantile";
  int p = 1;
  std::size_t projections = 128;
  std::uint64_t dseed = 1;
  CLI::App* dist = app.add_subcommand("distance", "Wasserstein distance between two point clouds (CSV, one row per point)");
  dist->add_option("a", a_path, "First point cloud")->required();
  dist->add_option("b", b_path, "Second point cloud")->required();
  dist->add_option("--method", method, "quantile, assignment or sliced")
      ->check(CLI::IsMember({"quantile", "assignment", "sliced"}));
  dist->add_option("--p", p, "Order (1 or 2)")->check(CLI::IsMember({1, 2}));
  dist->add_option("--projections", projections, "Directions for the sliced estimate");
  dist->add_option("--seed", dseed, "Seed for the sliced directions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (dist->parsed()) return run_distance(a_path, b_path, method, p, projections, dseed);
    for (const auto& [cmd, kind] : scenario_cmds) {
      if (cmd->parsed()) return run_scenario(kind, opts);
    }
  } catch (const kspoc::AssumptionError& e) {
    std::cerr << "refused: " << e.what() << "\n";
    return 2;
  } catch (const kspoc::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const kspoc::DomainError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const kspoc::CapacityError& e) {
    std::cerr << "refused: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
