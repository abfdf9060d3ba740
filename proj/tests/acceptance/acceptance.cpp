// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kspoc/config.hpp"
#include "kspoc/experiments.hpp"
#include "kspoc/field.hpp"
#include "kspoc/metrics.hpp"
#include "kspoc/model.hpp"
#include "kspoc/simulate.hpp"

using namespace kspoc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

MonitorReport g_monitors;
bool g_monitor_seen = false;

void absorb_monitors(const ExperimentResult& r) {
  const auto get = [&](const char* k) {
    auto it = r.summary.find(k);
    return it == r.summary.end() ? 0.0 : it->second;
  };
  if (r.summary.count("monitor_evaluations") == 0) return;
  g_monitor_seen = true;
  g_monitors.evaluations += static_cast<std::size_t>(get("monitor_evaluations"));
  g_monitors.grad_violations += static_cast<std::size_t>(get("monitor_grad_violations"));
  g_monitors.drift_violations += static_cast<std::size_t>(get("monitor_drift_violations"));
  g_monitors.max_grad = std::max(g_monitors.max_grad, get("monitor_max_grad"));
}

void absorb_monitors(const MonitorReport& m) {
  g_monitor_seen = true;
  g_monitors.merge(m);
}

std::string fmt(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

ScenarioConfig shipped(const std::string& name) {
  return load_scenario(fs::path(KSPOC_SOURCE_DIR) / "configs" / name);
}

// ---- 1: constants against a bisection root finder and grid-max kernel norms

double bisect(const std::function<double(double)>& f, double lo, double hi) {
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    if ((f(lo) < 0.0) == (f(mid) < 0.0)) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

Outcome criterion_constants() {
  const ModelInstance m = default_instance();
  const auto t0 = std::chrono::steady_clock::now();
  const TheoreticalConstants c = compute_constants(m);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  double g1 = 0.0, g2 = 0.0;
  for (int j = -80000; j <= 80000; ++j) {
    const double x = j * 1e-4;
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    g1 = std::max(g1, std::abs(x * phi));
    g2 = std::max(g2, std::abs((x * x - 1.0) * phi));
  }
  const double a = 1.0, alpha = 1.0, beta = 1.0, chi = 1.0;
  const double lambda = 2.0 * beta * g2 / alpha * chi;
  const double lt = a - chi * beta * g2 / alpha;
  const auto poly = [&](double r) { return r * r - (lt - alpha) * r - chi * beta * g2; };
  const double r1 = bisect(poly, 0.0, 10.0), r2 = bisect(poly, -10.0, 0.0);
  const double k = 2.0 * g1 * chi * beta / alpha / (r1 - r2) * (1.0 + alpha / (lt - r1));

  const auto rel = [](double got, double want) { return std::abs(got - want) / std::abs(want); };
  double worst = std::max({rel(c.lambda_threshold, lambda), rel(c.lambda_tilde, lt), rel(c.r1, r1), rel(c.r2, r2)});
  worst = std::max(worst, c.poc_bound_const ? rel(*c.poc_bound_const, k) : 1.0);
  const bool frozen = std::abs(c.lambda_threshold - 0.7978846) < 1e-6 && std::abs(c.lambda_tilde - 0.6010577) < 1e-6 &&
                      std::abs(c.r1 - 0.4628968) < 1e-6 && std::abs(c.r2 + 0.8618391) < 1e-6 &&
                      c.poc_bound_const && std::abs(*c.poc_bound_const - 3.01) < 5e-3;
  return {worst <= 1e-6 && frozen && secs < 1.0,
          "lambda " + fmt(c.lambda_threshold, 8) + ", lambda~ " + fmt(c.lambda_tilde, 8) + ", r1 " + fmt(c.r1, 8) +
              ", r2 " + fmt(c.r2, 8) + ", K " + fmt(c.poc_bound_const.value_or(NAN), 7) + "; max rel err vs oracle " +
              fmt(worst, 3) + ", " + fmt(secs * 1e3, 3) + " ms"};
}

// ---- 2: grid recursion vs direct history sum

Outcome criterion_evaluators() {
  const ModelInstance m = default_instance();
  const GridSpec spec{12.0, 2048};
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> pos(-1.5, 1.5);
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    FieldGrid grid(m, spec, 2.0);
    HistoryBuffer hist(0.01, 1, n);
    std::vector<double> y(n);
    for (int step = 0; step < 200; ++step) {
      for (auto& v : y) v = pos(rng);
      grid.advance(y, 0.01);
      hist.push(y);
    }
    for (int j = 0; j <= 60; ++j) {
      const double x[1] = {-1.5 + 0.05 * j};
      const FieldValue v = evaluate_h_direct(hist, m, 200, x);
      worst = std::max({worst, std::abs(v.h - grid.h_at(x[0])), std::abs(v.grad[0] - grid.grad_h_at(x[0]))});
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst <= 5e-3 && secs < 60.0, "sup error " + fmt(worst, 3) + " over 20 histories, " + fmt(secs, 3) + " s"};
}

// ---- 3-6: the shipped experiment configs

Outcome run_shipped(const std::string& config, double budget_s, const std::vector<std::string>& keys) {
  const ScenarioConfig sc = shipped(config);
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentResult r = run_experiment(sc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  absorb_monitors(r);
  bool ok = secs <= budget_s;
  std::string detail;
  for (const auto& v : r.verdicts) {
    if (v.name == "field_bounds") continue;
    ok = ok && v.passed;
    detail += (detail.empty() ? "" : "; ") + v.name + (v.passed ? " ok: " : " FAILED: ") + v.detail;
  }
  for (const auto& k : keys) {
    auto it = r.summary.find(k);
    if (it != r.summary.end()) detail += "; " + k + " " + fmt(it->second);
  }
  return {ok, detail + "; " + fmt(secs, 3) + " s"};
}

// ---- 8: metrics oracles

double brute_force(const EmpiricalMeasure& a, const EmpiricalMeasure& b, int p) {
  std::vector<std::size_t> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      double r2 = 0.0;
      for (int k = 0; k < a.dim(); ++k) r2 += std::pow(a.point(i)[k] - b.point(perm[i])[k], 2);
      s += p == 1 ? std::sqrt(r2) : r2;
    }
    best = std::min(best, s / perm.size());
  } while (std::next_permutation(perm.begin(), perm.end()));
  return p == 1 ? best : std::sqrt(best);
}

Outcome criterion_metrics() {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  const auto cloud = [&](std::size_t m, int d, double s) {
    std::vector<double> v(m * d);
    for (auto& x : v) x = s * nd(rng);
    return EmpiricalMeasure(std::move(v), d);
  };
  double brute_err = 0.0, quant_err = 0.0, sym_err = 0.0;
  std::size_t axiom_failures = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = 1 + rng() % 8;
    const int d = 1 + static_cast<int>(rng() % 2);
    const int p = 1 + static_cast<int>(rng() % 2);
    const auto a = cloud(m, d, 1.0), b = cloud(m, d, 1.5);
    brute_err = std::max(brute_err, std::abs(wp_assignment(a, b, p).value - brute_force(a, b, p)));
  }
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = 1 + rng() % 64;
    const auto a = cloud(m, 1, 1.0), b = cloud(m, 1, 2.0), c = cloud(m, 1, 0.5);
    const double w1 = w1_1d(a, b).value, w2 = w2_1d(a, b).value;
    quant_err = std::max({quant_err, std::abs(w1 - wp_assignment(a, b, 1).value),
                          std::abs(w2 - wp_assignment(a, b, 2).value)});
    sym_err = std::max({sym_err, std::abs(w1 - w1_1d(b, a).value), std::abs(w2 - w2_1d(b, a).value)});
    if (w1_1d(a, a).value != 0.0 || w2_1d(a, a).value != 0.0) ++axiom_failures;
    if (w1_1d(a, c).value > w1 + w1_1d(b, c).value + 1e-10) ++axiom_failures;
    if (w2_1d(a, c).value > w2 + w2_1d(b, c).value + 1e-10) ++axiom_failures;
    if (w1 > w2 + 1e-12) ++axiom_failures;
  }
  return {brute_err <= 1e-12 && quant_err <= 1e-12 && sym_err <= 1e-12 && axiom_failures == 0,
          "brute force max err " + fmt(brute_err, 3) + ", quantile vs assignment " + fmt(quant_err, 3) + ", symmetry " +
              fmt(sym_err, 3) + ", axiom/ordering failures " + std::to_string(axiom_failures)};
}

// ---- 9: second-moment stability over 8 seeds

Outcome criterion_stability() {
  const ModelInstance m = default_instance();
  const double eps0 = default_eps0(m).value_or(0.0);
  std::string detail = "T 20, N 128, 8 seeds, eps0 " + fmt(eps0) + ";";
  bool ok = eps0 > 0.0;
  for (double eps : {0.01, eps0}) {
    EulerConfig c;
    c.epsilon = eps;
    c.n_steps = static_cast<std::size_t>(std::lround(20.0 / eps));
    c.n_particles = 128;
    c.threads = 4;
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
      c.seed = 9000 + seed;
      const RunRecord rec = run_particle_system(c, m);
      absorb_monitors(rec.monitors);
      std::vector<double> m2;
      for (const auto& row : rec.moments) m2.push_back(row.m2);
      worst = std::max(worst, stability_ratio(m2));
      ok = ok && stability_verdict(m2).passed;
    }
    detail += " eps " + fmt(eps) + " worst quartile ratio " + fmt(worst, 4) + ";";
  }
  return {ok, detail + " limit " + fmt(kStabilityRatio)};
}

// ---- 10: byte-identical outputs across worker counts

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome criterion_determinism() {
  const fs::path base = fs::temp_directory_path() / "kspoc_acceptance_determinism";
  fs::remove_all(base);
  std::size_t compared = 0, differing = 0;
  for (const std::string cfg : {"default.toml", "poc_finite.toml"}) {
    ScenarioConfig sc = shipped(cfg);
    if (sc.experiment == ExperimentKind::poc_finite) {
      sc.horizon = 1.0;
      sc.sweep.replications = 8;
      sc.sweep.n_ref = 1024;
    }
    std::vector<fs::path> dirs;
    for (int threads : {1, 4, 8}) {
      sc.run.threads = threads;
      const ExperimentResult r = run_experiment(sc);
      absorb_monitors(r);
      dirs.push_back(base / (cfg + "_" + std::to_string(threads)));
      write_outputs(r, sc, dirs.back(), "fixed", threads);
    }
    for (const auto& e : fs::recursive_directory_iterator(dirs[0])) {
      if (e.path().extension() != ".csv") continue;
      const fs::path rel = fs::relative(e.path(), dirs[0]);
      const std::string ref = slurp(e.path());
      for (std::size_t k = 1; k < dirs.size(); ++k) {
        ++compared;
        if (!fs::exists(dirs[k] / rel) || slurp(dirs[k] / rel) != ref) ++differing;
      }
    }
  }
  fs::remove_all(base);
  return {compared > 0 && differing == 0,
          std::to_string(compared) + " CSV comparisons at 1/4/8 workers, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main() {
  int failures = 0;
  const auto report = [&](int id, const std::string& name, const std::function<Outcome()>& body) {
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.passed) ++failures;
    std::printf("%s %d %s: %s\n", o.passed ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "constants", criterion_constants);
  report(2, "evaluator_equivalence", criterion_evaluators);
  report(3, "poc_finite_rate", [] { return run_shipped("poc_finite.toml", 900, {"slope", "r2"}); });
  report(4, "poc_uniform", [] { return run_shipped("poc_uniform.toml", 900, {"n_sup_dev", "bound_limit"}); });
  report(5, "euler_rate", [] { return run_shipped("euler_rate.toml", 1200, {}); });
  report(6, "concentration", [] { return run_shipped("concentration.toml", 1800, {}); });
  report(8, "metrics_oracles", criterion_metrics);
  report(9, "stability", criterion_stability);
  report(10, "determinism", criterion_determinism);
  report(7, "field_monitors", [] {
    return Outcome{g_monitor_seen && g_monitors.grad_violations == 0 && g_monitors.drift_violations == 0,
                   std::to_string(g_monitors.evaluations) + " evaluations across the runs above, " +
                       std::to_string(g_monitors.grad_violations) + " gradient / " +
                       std::to_string(g_monitors.drift_violations) + " drift violations, max |grad h| " +
                       fmt(g_monitors.max_grad, 7) + " (bound 0.2419707 + 1e-3)"};
  });
  return failures == 0 ? 0 : 1;
}
