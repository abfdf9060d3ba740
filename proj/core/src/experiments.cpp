#include "kspoc/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kspoc/parallel.hpp"
#include "kspoc/rng.hpp"

namespace kspoc {

using nlohmann::json;

namespace {

constexpr std::uint64_t kTagReference = 0x52454645ULL;  // "REFE"
constexpr std::uint64_t kTagPocFinite = 0x504F4346ULL;
constexpr std::uint64_t kTagPocUniform = 0x504F4355ULL;
constexpr std::uint64_t kTagEuler = 0x45554C52ULL;
constexpr std::uint64_t kTagConcentration = 0x434F4E43ULL;

std::string fmt(double v, int digits = 6) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_error_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double n = static_cast<double>(v.size());
  return std::sqrt(ss / (n - 1.0) / n);
}

void require_grid_1d(const ScenarioConfig& sc, const std::string& what) {
  if (sc.model.params.dim != 1 || sc.run.field_method != FieldMethod::grid) {
    throw ConfigError(what + " runs on the d = 1 grid field (set run.field_method = \"grid\", model.dim = 1)");
  }
}

AssumptionReport require_assumption_A(const ModelInstance& model) {
  const AssumptionReport report = check_assumption_A(model);
  if (!report.satisfied) throw AssumptionError(report);
  return report;
}

std::uint64_t reference_seed(const ScenarioConfig& sc) {
  return sc.sweep.reference_seed.value_or(derive_seed(sc.seed, kTagReference, 0));
}

std::shared_ptr<const RecordedField> record_reference(const ScenarioConfig& sc, const EulerConfig& base,
                                                      ExperimentResult& res) {
  EulerConfig ref = base;
  ref.n_particles = sc.sweep.n_ref;
  ref.seed = reference_seed(sc);
  ref.replication = 0;
  ref.snapshot_steps.clear();
  ref.trajectory_stride = 0;
  res.child_seeds.emplace_back("reference", ref.seed);
  try {
    return std::make_shared<const RecordedField>(simulate_nonlinear_reference(ref, sc.model, sc.storage_cap_bytes()));
  } catch (const CapacityError&) {
    throw;
  } catch (const std::exception& e) {
    throw RunError(std::string("reference run (N_ref = ") + std::to_string(ref.n_particles) + "): " + e.what());
  }
}

Table snapshot_table(const FieldSnapshot& s) {
  Table t("kspoc.field_snapshot/1", {"x", "h", "theta", "grad_h"});
  for (std::size_t j = 0; j < s.x.size(); ++j) t.add({s.x[j], s.h[j], s.theta[j], s.grad_h[j]});
  return t;
}

std::string snapshot_name(std::size_t step) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "field_snapshots/step_%08zu.csv", step);
  return buf;
}

void add_monitor_summary(ExperimentResult& res, const MonitorReport& m) {
  res.summary["monitor_evaluations"] = static_cast<double>(m.evaluations);
  res.summary["monitor_grad_violations"] = static_cast<double>(m.grad_violations);
  res.summary["monitor_drift_violations"] = static_cast<double>(m.drift_violations);
  res.summary["monitor_max_grad"] = m.max_grad;
  res.verdicts.push_back(field_monitor_verdict(m));
}

double sup_over(const std::vector<double>& t, const std::vector<double>& v, double lo, double hi) {
  double s = 0.0;
  bool any = false;
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (t[k] >= lo - 1e-12 && t[k] <= hi + 1e-12) {
      s = any ? std::max(s, v[k]) : v[k];
      any = true;
    }
  }
  return s;
}

}  // namespace

AssumptionError::AssumptionError(const AssumptionReport& report)
    : ConfigError("Assumption A fails: v* = " + fmt(report.v_star) + ", threshold lambda = " +
                  fmt(report.lambda_threshold) + ", margin = " + fmt(report.margin) + " < 0"),
      report_(report) {}

bool ExperimentResult::passed() const {
  return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.passed; });
}

// ---------------------------------------------------------------- verdicts

std::vector<Verdict> poc_finite_verdicts(const Table& results, std::optional<LinearFit>* fit) {
  const auto n = results.column("N");
  const auto dev = results.column("sup_dev");
  if (fit) fit->reset();
  if (std::all_of(dev.begin(), dev.end(), [](double d) { return d == 0.0; })) {
    return {{"poc_rate", true, "decoupled: all deviations are exactly 0, slope fit skipped"}};
  }
  if (n.size() < 3) return {{"poc_rate", true, "fewer than 3 N values: table only, no fit"}};
  std::vector<double> lx, ly;
  for (std::size_t k = 0; k < n.size(); ++k) {
    if (!(dev[k] > 0.0)) return {{"poc_rate", false, "zero deviation at N = " + fmt(n[k]) + " among nonzero ones"}};
    lx.push_back(std::log(n[k]));
    ly.push_back(std::log(dev[k]));
  }
  const LinearFit f = slope_fit(lx, ly);
  if (fit) *fit = f;
  const bool ok = f.slope >= kPocSlopeLow && f.slope <= kPocSlopeHigh;
  return {{"poc_rate", ok,
           "slope " + fmt(f.slope) + " (R2 " + fmt(f.r2, 4) + "), band [" + fmt(kPocSlopeLow) + ", " +
               fmt(kPocSlopeHigh) + "]"}};
}

std::vector<Verdict> poc_uniform_verdicts(const Table& curve, std::size_t n_particles,
                                          std::optional<double> bound_const, double slack) {
  const auto t = curve.column("t");
  const auto mean = curve.column("mean");
  const double T = t.empty() ? 0.0 : t.back();
  const double late = sup_over(t, mean, T / 2.0, T);
  const double mid = sup_over(t, mean, T / 4.0, T / 2.0);
  std::vector<Verdict> out;
  const bool plateau = late <= kPlateauRatio * mid;
  out.push_back({"plateau", plateau,
                 "sup[T/2,T] = " + fmt(late) + ", sup[T/4,T/2] = " + fmt(mid) +
                     (mid > 0.0 ? ", ratio " + fmt(late / mid) : std::string()) + ", limit " + fmt(kPlateauRatio)});
  const double sup_all = mean.empty() ? 0.0 : *std::max_element(mean.begin(), mean.end());
  const double scaled = static_cast<double>(n_particles) * sup_all;
  if (!bound_const) {
    out.push_back({"bound", false, "no bound constant: lambda_tilde <= r1 for this instance"});
  } else {
    const double limit = slack * (*bound_const) * (*bound_const);
    out.push_back({"bound", scaled <= limit,
                   "N sup_t dev^2 = " + fmt(scaled) + ", limit " + fmt(slack) + " x " + fmt(*bound_const) + "^2 = " +
                       fmt(limit)});
  }
  return out;
}

std::vector<Verdict> euler_rate_verdicts(const Table& results, LinearFit* early, LinearFit* late) {
  const auto eps = results.column("epsilon");
  const auto mse_e = results.column("mse_early");
  const auto mse_l = results.column("mse_late");
  std::vector<Verdict> out;
  if (eps.size() < 3) {
    out.push_back({"euler_rate", true, "fewer than 3 step sizes: table only, no fit"});
  } else {
    std::vector<double> lx, le, ll;
    for (std::size_t k = 0; k < eps.size(); ++k) {
      lx.push_back(std::log(eps[k]));
      le.push_back(std::log(mse_e[k]));
      ll.push_back(std::log(mse_l[k]));
    }
    const LinearFit fe = slope_fit(lx, le), fl = slope_fit(lx, ll);
    if (early) *early = fe;
    if (late) *late = fl;
    auto in_band = [](double s) { return s >= kEulerSlopeLow && s <= kEulerSlopeHigh; };
    const std::string band = ", band [" + fmt(kEulerSlopeLow) + ", " + fmt(kEulerSlopeHigh) + "]";
    out.push_back({"euler_rate_early", in_band(fe.slope), "slope " + fmt(fe.slope) + " (R2 " + fmt(fe.r2, 4) + ")" + band});
    out.push_back({"euler_rate_late", in_band(fl.slope), "slope " + fmt(fl.slope) + " (R2 " + fmt(fl.r2, 4) + ")" + band});
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < eps.size(); ++k) {
    worst = std::max(worst, mse_e[k] > 0.0 ? mse_l[k] / mse_e[k] : (mse_l[k] > 0.0 ? HUGE_VAL : 1.0));
  }
  out.push_back({"euler_uniform", worst <= kEulerUniformRatio,
                 "max late/early MSE ratio " + fmt(worst) + ", limit " + fmt(kEulerUniformRatio)});
  return out;
}

double corrected_tail(std::size_t exceed, std::size_t replications) {
  return (static_cast<double>(exceed) + 0.5) / (static_cast<double>(replications) + 1.0);
}

std::vector<Verdict> concentration_verdicts(const Table& results) {
  const std::size_t ci = [&] {
    for (std::size_t c = 0; c < results.columns.size(); ++c) {
      if (results.columns[c] == "time_label") return c;
    }
    throw ConfigError("concentration table has no time_label column");
  }();
  const auto n = results.column("N");
  const auto eps = results.column("epsilon");
  const auto exceed = results.column("exceed");
  const auto reps = results.column("replications");
  const auto tail = results.column("tail");
  const auto lower = results.column("lower");
  const auto upper = results.column("upper");

  std::vector<std::string> labels;
  for (const auto& row : results.rows) {
    if (std::find(labels.begin(), labels.end(), row[ci]) == labels.end()) labels.push_back(row[ci]);
  }
  std::vector<Verdict> out;
  for (const auto& label : labels) {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < results.rows.size(); ++k) {
      if (results.rows[k][ci] == label) idx.push_back(k);
    }
    // Monotone in N at each threshold, up to Wilson-interval overlap.
    std::string bad;
    for (std::size_t a : idx) {
      for (std::size_t b : idx) {
        if (eps[a] != eps[b] || !(n[b] > n[a])) continue;
        if (tail[b] > tail[a] && lower[b] > upper[a]) {
          bad = "tail rises from " + fmt(tail[a]) + " (N = " + fmt(n[a]) + ") to " + fmt(tail[b]) + " (N = " +
                fmt(n[b]) + ") at eps = " + fmt(eps[a]);
        }
      }
    }
    out.push_back({"tail_monotone_" + label, bad.empty(), bad.empty() ? "nonincreasing in N at every threshold" : bad});

    std::vector<double> x, y;
    for (std::size_t k : idx) {
      x.push_back(n[k] * eps[k] * eps[k]);
      y.push_back(-std::log(corrected_tail(static_cast<std::size_t>(exceed[k]), static_cast<std::size_t>(reps[k]))));
    }
    if (x.size() < 3) {
      out.push_back({"tail_exponent_" + label, true, "fewer than 3 grid points: table only"});
      continue;
    }
    try {
      const LinearFit f = slope_fit(x, y);
      const bool ok = f.slope > 0.0 && f.r2 >= kConcentrationR2;
      out.push_back({"tail_exponent_" + label, ok,
                     "-log tail vs N eps^2: slope " + fmt(f.slope) + ", R2 " + fmt(f.r2, 4) + " (need > 0 and >= " +
                         fmt(kConcentrationR2) + ")"});
    } catch (const DomainError& e) {
      out.push_back({"tail_exponent_" + label, false, e.what()});
    }
  }
  return out;
}

double stability_ratio(const std::vector<double>& m2) {
  const std::size_t n = m2.size();
  if (n < 4) throw DomainError("stability ratio needs at least 4 samples");
  auto mean_range = [&](std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t k = lo; k < hi; ++k) s += m2[k];
    return s / static_cast<double>(hi - lo);
  };
  const double second = mean_range(n / 4, n / 2);
  const double last = mean_range(3 * n / 4, n);
  return second > 0.0 ? last / second : (last > 0.0 ? HUGE_VAL : 1.0);
}

Verdict stability_verdict(const std::vector<double>& m2) {
  const double r = stability_ratio(m2);
  return {"stability", r <= kStabilityRatio,
          "last/second quartile mean of m2 = " + fmt(r) + ", limit " + fmt(kStabilityRatio)};
}

Verdict field_monitor_verdict(const MonitorReport& m) {
  if (m.grad_violations == 0 && m.drift_violations == 0) {
    return {"field_bounds", true,
            std::to_string(m.evaluations) + " evaluations, max |grad h| " + fmt(m.max_grad) + ", no violations"};
  }
  return {"field_bounds", false,
          std::to_string(m.grad_violations) + " gradient / " + std::to_string(m.drift_violations) +
              " drift violations; first: " + m.first_violation};
}

// ---------------------------------------------------------------- constants

std::string constants_to_json(const ModelInstance& model, int indent) {
  const AssumptionReport a = check_assumption_A(model);
  const TheoreticalConstants c = compute_constants(model);
  const SupNorms g = kernel_sup_norms(model.kernel);
  const SupNorms h0 = model.h0.sup_norms();
  json j;
  j["lambda"] = c.lambda_threshold;
  j["v_star"] = c.v_star;
  j["v_star_exact"] = c.v_star_exact;
  j["C1"] = c.C1;
  j["C2"] = c.C2;
  j["C3"] = c.C3;
  j["lambda_tilde"] = c.lambda_tilde;
  j["C2_tilde"] = c.C2_tilde;
  j["C3_tilde"] = c.C3_tilde;
  j["r1"] = c.r1;
  j["r2"] = c.r2;
  j["poc_bound_const"] = c.poc_bound_const ? json(*c.poc_bound_const) : json(nullptr);
  j["kernel_norms"] = {{"value", g.value}, {"gradient", g.gradient}, {"hessian", g.hessian}};
  j["h0_norms"] = {{"value", h0.value}, {"gradient", h0.gradient}, {"hessian", h0.hessian}};
  j["field_gradient_bound_t0"] = field_gradient_bound(model, 0.0);
  j["field_gradient_bound_inf"] = field_gradient_bound(model, 1e300);
  const auto level = second_moment_level(model);
  const auto eps0 = default_eps0(model);
  j["second_moment_level"] = level ? json(*level) : json(nullptr);
  j["eps0"] = eps0 ? json(*eps0) : json(nullptr);
  j["assumption_A"] = {{"satisfied", a.satisfied}, {"v_star", a.v_star}, {"lambda", a.lambda_threshold},
                       {"margin", a.margin}};
  return j.dump(indent);
}

ExperimentResult run_constants(const ScenarioConfig& sc) {
  sc.model.validate();
  ExperimentResult res;
  res.kind = ExperimentKind::constants;
  const AssumptionReport a = check_assumption_A(sc.model);
  const TheoreticalConstants c = compute_constants(sc.model);
  res.results = Table("kspoc.constants/1", {"name", "value"});
  auto put = [&](const std::string& name, double v) {
    res.results.add({name, v});
    res.summary[name] = v;
  };
  put("lambda", c.lambda_threshold);
  put("v_star", c.v_star);
  put("C1", c.C1);
  put("C2", c.C2);
  put("C3", c.C3);
  put("lambda_tilde", c.lambda_tilde);
  put("C2_tilde", c.C2_tilde);
  put("C3_tilde", c.C3_tilde);
  put("r1", c.r1);
  put("r2", c.r2);
  if (c.poc_bound_const) put("poc_bound_const", *c.poc_bound_const);
  put("assumption_margin", a.margin);
  res.verdicts.push_back({"assumption_A", true,
                          std::string(a.satisfied ? "satisfied" : "not satisfied") + ", margin " + fmt(a.margin)});
  return res;
}

// ---------------------------------------------------------------- simulate

ExperimentResult run_simulate(const ScenarioConfig& sc) {
  sc.validate();
  const EulerConfig cfg = sc.euler();
  ExperimentResult res;
  res.kind = ExperimentKind::simulate;
  res.results_file = "moments.csv";
  res.child_seeds.emplace_back("run", cfg.run_seed());
  const RunRecord rec = run_particle_system(cfg, sc.model);
  const int d = sc.model.params.dim;
  const char* axes[] = {"x", "y", "z"};

  std::vector<std::string> mcols{"step", "t"};
  for (int c = 0; c < d; ++c) mcols.push_back(std::string("mean_") + axes[c]);
  mcols.push_back("m2");
  res.results = Table("kspoc.moments/1", mcols);
  std::vector<double> m2;
  for (const auto& row : rec.moments) {
    std::vector<Cell> cells{row.step, row.t};
    for (int c = 0; c < d; ++c) cells.emplace_back(row.mean[c]);
    cells.emplace_back(row.m2);
    res.results.add(std::move(cells));
    m2.push_back(row.m2);
  }

  std::vector<std::string> tcols{"step", "t", "particle_id"};
  for (int c = 0; c < d; ++c) tcols.emplace_back(axes[c]);
  Table traj("kspoc.trajectory/1", tcols);
  for (const auto& row : rec.trajectory) {
    const std::size_t n = row.positions.size() / static_cast<std::size_t>(d);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<Cell> cells{row.step, row.t, i};
      for (int c = 0; c < d; ++c) cells.emplace_back(row.positions[i * d + c]);
      traj.add(std::move(cells));
    }
  }
  res.extra.emplace_back("trajectory.csv", std::move(traj));
  for (const auto& s : rec.snapshots) res.extra.emplace_back(snapshot_name(s.step), snapshot_table(s));

  res.summary["max_m2"] = rec.max_m2;
  if (rec.second_moment_level) res.summary["second_moment_level"] = *rec.second_moment_level;
  add_monitor_summary(res, rec.monitors);
  const auto eps0 = default_eps0(sc.model);
  if (eps0 && cfg.epsilon <= *eps0 && m2.size() >= 8) res.verdicts.push_back(stability_verdict(m2));
  return res;
}

// ---------------------------------------------------------------- propagation of chaos

ExperimentResult exp_poc_finite(const ScenarioConfig& sc) {
  sc.validate();
  require_grid_1d(sc, "poc_finite");
  const EulerConfig base = sc.euler();
  ExperimentResult res;
  res.kind = ExperimentKind::poc_finite;
  const auto reference = record_reference(sc, base, res);

  res.results = Table("kspoc.poc_finite/1", {"N", "sup_dev", "se", "sup_time", "replications", "n_ref"});
  Table curves("kspoc.poc_finite.curves/1", {"N", "t", "mean", "se"});
  MonitorReport monitors;
  for (std::size_t n : sc.sweep.n_values) {
    CoupledRunConfig cc;
    cc.system = base;
    cc.system.n_particles = n;
    cc.system.seed = derive_seed(sc.seed, kTagPocFinite, n);
    cc.system.snapshot_steps.clear();
    cc.reference = reference;
    cc.replications = sc.sweep.replications;
    res.child_seeds.emplace_back("N=" + std::to_string(n), cc.system.seed);
    DeviationSeries dev;
    try {
      dev = run_coupled_poc(cc, sc.model);
    } catch (const std::exception& e) {
      throw RunError("poc_finite N = " + std::to_string(n) + ", " + e.what());
    }
    const auto it = std::max_element(dev.mean.begin(), dev.mean.end());
    const std::size_t k = static_cast<std::size_t>(it - dev.mean.begin());
    res.results.add({n, dev.mean[k], dev.std_error[k], dev.t[k], sc.sweep.replications, sc.sweep.n_ref});
    for (std::size_t j = 0; j < dev.t.size(); ++j) curves.add({n, dev.t[j], dev.mean[j], dev.std_error[j]});
    monitors.merge(dev.monitors);
  }
  res.extra.emplace_back("curves.csv", std::move(curves));

  std::optional<LinearFit> fit;
  for (auto& v : poc_finite_verdicts(res.results, &fit)) res.verdicts.push_back(std::move(v));
  if (fit) {
    res.summary["slope"] = fit->slope;
    res.summary["intercept"] = fit->intercept;
    res.summary["r2"] = fit->r2;
  }
  add_monitor_summary(res, monitors);
  return res;
}

ExperimentResult exp_poc_uniform(const ScenarioConfig& sc) {
  sc.validate();
  require_grid_1d(sc, "poc_uniform");
  const AssumptionReport report = require_assumption_A(sc.model);
  const TheoreticalConstants constants = compute_constants(sc.model);
  const EulerConfig base = sc.euler();
  ExperimentResult res;
  res.kind = ExperimentKind::poc_uniform;
  const auto reference = record_reference(sc, base, res);

  CoupledRunConfig cc;
  cc.system = base;
  cc.system.seed = derive_seed(sc.seed, kTagPocUniform, base.n_particles);
  cc.system.snapshot_steps.clear();
  cc.reference = reference;
  cc.replications = sc.sweep.replications;
  res.child_seeds.emplace_back("N=" + std::to_string(base.n_particles), cc.system.seed);
  DeviationSeries dev;
  try {
    dev = run_coupled_poc(cc, sc.model);
  } catch (const std::exception& e) {
    throw RunError("poc_uniform N = " + std::to_string(base.n_particles) + ", " + e.what());
  }
  res.results = Table("kspoc.poc_uniform/1", {"t", "mean", "se"});
  for (std::size_t j = 0; j < dev.t.size(); ++j) res.results.add({dev.t[j], dev.mean[j], dev.std_error[j]});

  for (auto& v : poc_uniform_verdicts(res.results, base.n_particles, constants.poc_bound_const, sc.sweep.slack)) {
    res.verdicts.push_back(std::move(v));
  }
  const double sup = dev.sup_mean();
  res.summary["sup_dev"] = sup;
  res.summary["n_sup_dev"] = static_cast<double>(base.n_particles) * sup;
  if (constants.poc_bound_const) {
    res.summary["poc_bound_const"] = *constants.poc_bound_const;
    res.summary["bound_limit"] = sc.sweep.slack * *constants.poc_bound_const * *constants.poc_bound_const;
  }
  res.summary["assumption_margin"] = report.margin;
  add_monitor_summary(res, dev.monitors);
  return res;
}

// ---------------------------------------------------------------- Euler scheme

ExperimentResult exp_euler_rate(const ScenarioConfig& sc) {
  sc.validate();
  require_assumption_A(sc.model);
  const auto eps0 = default_eps0(sc.model);
  ExperimentResult res;
  res.kind = ExperimentKind::euler_rate;
  res.results = Table("kspoc.euler_rate/1",
                      {"epsilon", "n_steps", "t_early", "mse_early", "se_early", "t_late", "mse_late", "se_late"});
  const std::size_t R = sc.sweep.replications;
  const int threads = resolve_threads(sc.run.threads);
  MonitorReport monitors;

  for (std::size_t k = 0; k < sc.sweep.eps_values.size(); ++k) {
    const double eps = sc.sweep.eps_values[k];
    if (eps0 && eps > *eps0) {
      throw ConfigError("step size " + fmt(eps) + " is above eps0 = " + fmt(*eps0) + " for this instance");
    }
    ScenarioConfig at = sc;
    at.run.epsilon = eps;
    at.snapshot_times.clear();
    EulerConfig cfg = at.euler();
    if (cfg.n_steps < 4 || cfg.n_steps % 4 != 0) {
      throw ConfigError("horizon / epsilon must be a positive multiple of 4 (epsilon = " + fmt(eps) + ")");
    }
    cfg.seed = derive_seed(sc.seed, kTagEuler, k);
    cfg.threads = 1;
    cfg.trajectory_stride = 0;
    res.child_seeds.emplace_back("epsilon=" + fmt(eps, 17), cfg.seed);
    const std::size_t early = cfg.n_steps / 4, late = cfg.n_steps;
    std::vector<double> mse_e(R), mse_l(R);
    std::vector<MonitorReport> mon(R);
    parallel_for(R, threads, [&](std::size_t r) {
      EulerConfig c = cfg;
      c.replication = r;
      RefinementPair pair;
      try {
        pair = run_refinement_pair(c, sc.sweep.levels, sc.model, sc.storage_cap_bytes());
      } catch (const CapacityError&) {
        throw;
      } catch (const std::exception& e) {
        throw RunError("euler_rate epsilon = " + fmt(eps) + ", replication " + std::to_string(r) + ": " + e.what());
      }
      auto mse = [&](std::size_t n) {
        const auto& a = pair.coarse[n];
        const auto& b = pair.fine.states[n];
        double s = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
        return s / static_cast<double>(c.n_particles);
      };
      mse_e[r] = mse(early);
      mse_l[r] = mse(late);
      mon[r] = pair.fine.monitors;
    });
    for (const auto& m : mon) monitors.merge(m);
    res.results.add({eps, cfg.n_steps, static_cast<double>(early) * eps, mean_of(mse_e), std_error_of(mse_e),
                     static_cast<double>(late) * eps, mean_of(mse_l), std_error_of(mse_l)});
  }

  LinearFit fe, fl;
  for (auto& v : euler_rate_verdicts(res.results, &fe, &fl)) res.verdicts.push_back(std::move(v));
  if (sc.sweep.eps_values.size() >= 3) {
    res.summary["slope_early"] = fe.slope;
    res.summary["slope_late"] = fl.slope;
    res.summary["r2_early"] = fe.r2;
    res.summary["r2_late"] = fl.r2;
  }
  add_monitor_summary(res, monitors);
  return res;
}

// ---------------------------------------------------------------- concentration

namespace {

// Positions at the requested steps of one run.
std::vector<std::vector<double>> capture_run(const EulerConfig& cfg, const ModelInstance& model,
                                             const std::vector<std::size_t>& steps, MonitorReport& monitors) {
  std::vector<std::vector<double>> out(steps.size());
  auto grab = [&](const ParticleEnsemble& ens) {
    for (std::size_t k = 0; k < steps.size(); ++k) {
      if (steps[k] == ens.step) out[k] = ens.positions;
    }
  };
  EulerConfig c = cfg;
  c.n_steps = *std::max_element(steps.begin(), steps.end());
  c.snapshot_steps.clear();
  c.trajectory_stride = 0;
  RunRecord rec = run_particle_system(c, model, [&](const ParticleEnsemble& ens, const DriftField&) { grab(ens); });
  monitors.merge(rec.monitors);
  return out;
}

double w1_to_reference(const std::vector<double>& sample, const std::vector<double>& reference, int dim,
                       std::uint64_t seed) {
  const std::size_t n = sample.size() / dim, m = reference.size() / dim;
  const std::size_t rep = m / n;
  std::vector<double> expanded;
  expanded.reserve(reference.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < rep; ++k) {
      expanded.insert(expanded.end(), sample.begin() + i * dim, sample.begin() + (i + 1) * dim);
    }
  }
  const EmpiricalMeasure a(std::move(expanded), dim), b(reference, dim);
  if (dim == 1) return w1_1d(a, b).value;
  return sliced_w1(a, b, 128, seed).value;
}

}  // namespace

ExperimentResult exp_concentration(const ScenarioConfig& sc) {
  sc.validate();
  const EulerConfig base = sc.euler();
  const int dim = sc.model.params.dim;
  const double s_fin = sc.sweep.t_finite / base.epsilon;
  if (std::abs(s_fin - std::round(s_fin)) > 1e-9 * std::max(1.0, s_fin)) {
    throw ConfigError("sweep.t_finite must be a multiple of run.epsilon");
  }
  const bool long_time = check_assumption_A(sc.model).satisfied;
  std::vector<std::size_t> steps{static_cast<std::size_t>(std::round(s_fin))};
  std::vector<std::string> labels{"finite"};
  if (long_time) {
    steps.push_back(base.n_steps);
    labels.emplace_back("long");
  }
  for (std::size_t n : sc.sweep.n_values) {
    if (sc.sweep.n_ref % n != 0) {
      throw ConfigError("sweep.n_ref = " + std::to_string(sc.sweep.n_ref) + " must be a multiple of every N (got " +
                        std::to_string(n) + ")");
    }
  }

  ExperimentResult res;
  res.kind = ExperimentKind::concentration;
  MonitorReport monitors;
  EulerConfig ref = base;
  ref.n_particles = sc.sweep.n_ref;
  ref.seed = reference_seed(sc);
  res.child_seeds.emplace_back("reference", ref.seed);
  std::vector<std::vector<double>> ref_states;
  try {
    ref_states = capture_run(ref, sc.model, steps, monitors);
  } catch (const std::exception& e) {
    throw RunError(std::string("concentration reference run: ") + e.what());
  }

  const std::size_t R = sc.sweep.replications;
  const int threads = resolve_threads(sc.run.threads);
  Table samples("kspoc.concentration.samples/1", {"time_label", "t", "N", "replication", "w1"});
  res.results = Table("kspoc.concentration/1", {"time_label", "t", "N", "epsilon", "n_eps2", "exceed", "replications",
                                                "tail", "lower", "upper", "corrected_tail"});
  // w1[n_index][time_index][replication]
  std::vector<std::vector<std::vector<double>>> w1(sc.sweep.n_values.size(),
                                                   std::vector<std::vector<double>>(steps.size(), std::vector<double>(R)));
  for (std::size_t ni = 0; ni < sc.sweep.n_values.size(); ++ni) {
    const std::size_t n = sc.sweep.n_values[ni];
    EulerConfig cfg = base;
    cfg.n_particles = n;
    cfg.seed = derive_seed(sc.seed, kTagConcentration, n);
    cfg.threads = 1;
    res.child_seeds.emplace_back("N=" + std::to_string(n), cfg.seed);
    std::vector<MonitorReport> mon(R);
    parallel_for(R, threads, [&](std::size_t r) {
      EulerConfig c = cfg;
      c.replication = r;
      std::vector<std::vector<double>> states;
      try {
        states = capture_run(c, sc.model, steps, mon[r]);
      } catch (const std::exception& e) {
        throw RunError("concentration N = " + std::to_string(n) + ", replication " + std::to_string(r) + ": " +
                       e.what());
      }
      for (std::size_t k = 0; k < steps.size(); ++k) {
        w1[ni][k][r] = w1_to_reference(states[k], ref_states[k], dim, c.run_seed());
      }
    });
    for (const auto& m : mon) monitors.merge(m);
  }

  for (std::size_t k = 0; k < steps.size(); ++k) {
    const double t = static_cast<double>(steps[k]) * base.epsilon;
    for (std::size_t ni = 0; ni < sc.sweep.n_values.size(); ++ni) {
      const std::size_t n = sc.sweep.n_values[ni];
      for (std::size_t r = 0; r < R; ++r) samples.add({labels[k], t, n, r, w1[ni][k][r]});
      for (double eps : sc.sweep.thresholds) {
        const TailEstimate te = tail_probability(w1[ni][k], eps);
        res.results.add({labels[k], t, n, eps, static_cast<double>(n) * eps * eps, te.exceed, te.n, te.estimate,
                         te.lower, te.upper, corrected_tail(te.exceed, te.n)});
      }
    }
  }
  res.extra.emplace_back("w1_samples.csv", std::move(samples));
  for (auto& v : concentration_verdicts(res.results)) res.verdicts.push_back(std::move(v));
  if (!long_time) {
    res.verdicts.push_back({"long_time", true, "Assumption A fails: long-time variant skipped"});
  }
  add_monitor_summary(res, monitors);
  return res;
}

// ---------------------------------------------------------------- field bounds

ExperimentResult exp_field_bounds(const ScenarioConfig& sc) {
  sc.validate();
  const EulerConfig cfg = sc.euler();
  const ModelInstance& model = sc.model;
  const int dim = model.params.dim;
  ExperimentResult res;
  res.kind = ExperimentKind::field_bounds;
  res.child_seeds.emplace_back("run", cfg.run_seed());
  res.results = Table("kspoc.field_bounds/1",
                      {"step", "t", "grad_bound", "max_grad_probe", "lipschitz_bound", "max_lipschitz_probe"});
  const std::size_t stride = std::max<std::size_t>(1, cfg.n_steps / 100);
  const double tol = kFieldBoundTolerance;
  std::size_t probe_grad_bad = 0, probe_lip_bad = 0;
  std::string first_bad;

  // Probe pairs (x, x + delta e_1) on a line through the origin inside the safe region.
  auto probe = [&](const DriftField& field, std::size_t step) {
    const double t = static_cast<double>(step) * cfg.epsilon;
    const double reach = std::min(6.0, field.safe_limit() - 0.5);
    const double gb = field_gradient_bound(model, t), lb = field_lipschitz_bound(model, t);
    double max_grad = 0.0, max_lip = 0.0;
    std::vector<double> x(dim, 0.0), y(dim, 0.0), gx(dim), gy(dim);
    for (int j = 0; j <= 120; ++j) {
      x[0] = -reach + 2.0 * reach * j / 120.0;
      field.grad_h(x, gx);
      double nx = 0.0;
      for (double v : gx) nx += v * v;
      max_grad = std::max(max_grad, std::sqrt(nx));
      for (double delta : {0.01, 0.1, 0.5}) {
        y = x;
        y[0] = std::min(x[0] + delta, reach);
        if (y[0] <= x[0]) continue;
        field.grad_h(y, gy);
        double nd = 0.0;
        for (int c = 0; c < dim; ++c) nd += (gy[c] - gx[c]) * (gy[c] - gx[c]);
        max_lip = std::max(max_lip, std::sqrt(nd) / (y[0] - x[0]));
      }
    }
    if (max_grad > gb + tol) {
      ++probe_grad_bad;
      if (first_bad.empty()) first_bad = "probe |grad h| " + fmt(max_grad) + " > " + fmt(gb) + " at t = " + fmt(t);
    }
    if (max_lip > lb + tol) {
      ++probe_lip_bad;
      if (first_bad.empty()) first_bad = "probe Lipschitz quotient " + fmt(max_lip) + " > " + fmt(lb) + " at t = " + fmt(t);
    }
    res.results.add({step, t, gb, max_grad, lb, max_lip});
  };

  probe(*make_drift_field(model, cfg), 0);
  RunRecord rec = run_particle_system(cfg, model, [&](const ParticleEnsemble& ens, const DriftField& field) {
    if (ens.step % stride == 0) probe(field, ens.step);
  });
  for (const auto& s : rec.snapshots) res.extra.emplace_back(snapshot_name(s.step), snapshot_table(s));

  add_monitor_summary(res, rec.monitors);
  res.summary["max_grad_excess"] = rec.monitors.max_grad_excess;
  res.summary["grad_bound_t0"] = field_gradient_bound(model, 0.0);
  res.summary["grad_bound_inf"] = field_gradient_bound(model, 1e300);
  const auto grads = res.results.column("max_grad_probe");
  const auto lips = res.results.column("max_lipschitz_probe");
  res.summary["max_grad_probe"] = *std::max_element(grads.begin(), grads.end());
  res.summary["max_lipschitz_probe"] = *std::max_element(lips.begin(), lips.end());
  res.verdicts.push_back({"probe_gradient", probe_grad_bad == 0,
                          probe_grad_bad == 0 ? "probe gradients within bound" : first_bad});
  res.verdicts.push_back({"probe_lipschitz", probe_lip_bad == 0,
                          probe_lip_bad == 0 ? "probe Lipschitz quotients within bound" : first_bad});
  return res;
}

ExperimentResult run_experiment(const ScenarioConfig& sc) {
  switch (sc.experiment) {
    case ExperimentKind::constants: return run_constants(sc);
    case ExperimentKind::simulate: return run_simulate(sc);
    case ExperimentKind::poc_finite: return exp_poc_finite(sc);
    case ExperimentKind::poc_uniform: return exp_poc_uniform(sc);
    case ExperimentKind::euler_rate: return exp_euler_rate(sc);
    case ExperimentKind::concentration: return exp_concentration(sc);
    case ExperimentKind::field_bounds: return exp_field_bounds(sc);
  }
  throw ConfigError("unknown experiment");
}

// ---------------------------------------------------------------- outputs

void write_outputs(const ExperimentResult& result, const ScenarioConfig& sc, const std::filesystem::path& dir,
                   const std::string& started, int threads) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> outputs{result.results_file};
  write_file_atomic(dir / result.results_file, result.results.to_csv());
  for (const auto& [name, table] : result.extra) {
    write_file_atomic(dir / name, table.to_csv());
    outputs.push_back(name);
  }
  json m;
  m["manifest_version"] = 1;
  m["code_version"] = code_version();
  m["experiment"] = to_string(result.kind);
  m["config"] = json::parse(scenario_to_json(sc));
  m["master_seed"] = sc.seed;
  json seeds = json::object();
  for (const auto& [name, seed] : result.child_seeds) seeds[name] = seed;
  m["child_seeds"] = seeds;
  m["started"] = started;
  m["finished"] = utc_timestamp();
  m["threads"] = threads;
  m["outputs"] = outputs;
  json verdicts = json::array();
  for (const auto& v : result.verdicts) verdicts.push_back({{"name", v.name}, {"passed", v.passed}, {"detail", v.detail}});
  m["verdicts"] = verdicts;
  m["passed"] = result.passed();
  json summary = json::object();
  for (const auto& [k, v] : result.summary) summary[k] = std::isfinite(v) ? json(v) : json(format_double(v));
  m["summary"] = summary;
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

ScenarioConfig scenario_from_manifest(const std::filesystem::path& manifest) {
  json m;
  try {
    m = json::parse(read_text_file(manifest));
  } catch (const json::parse_error& e) {
    throw ConfigError(manifest.string() + ": " + e.what());
  }
  if (!m.contains("config")) throw ConfigError(manifest.string() + " has no config echo");
  return parse_scenario_json(m["config"].dump(), manifest.string());
}

}  // namespace kspoc
