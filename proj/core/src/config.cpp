#include "kspoc/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "kspoc/errors.hpp"

namespace kspoc {

using nlohmann::json;

namespace {

json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    json out = json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = toml_to_json(v);
    return out;
  }
  if (const auto* a = node.as_array()) {
    json out = json::array();
    for (const auto& v : *a) out.push_back(toml_to_json(v));
    return out;
  }
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  if (const auto* v = node.as_string()) return v->get();
  throw ConfigError("unsupported TOML value type (dates and times are not part of the schema)");
}

// Reads keys from one JSON object and reports unknown ones.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be a table");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key '" + where(k) + "'");
    }
  }

  bool has(const std::string& k) const { return j_.contains(k); }

  const json& raw(const std::string& k) {
    seen_.insert(k);
    return j_.at(k);
  }

  double number(const std::string& k, double fallback) {
    if (!has(k)) return fallback;
    const json& v = raw(k);
    if (!v.is_number()) throw ConfigError(where(k) + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(where(k) + " must be finite");
    return d;
  }

  template <class Int>
  Int integer(const std::string& k, Int fallback) {
    if (!has(k)) return fallback;
    const json& v = raw(k);
    if (v.is_number_unsigned()) return static_cast<Int>(v.get<std::uint64_t>());
    if (v.is_number_integer()) {
      const auto i = v.get<std::int64_t>();
      if (i < 0 && std::is_unsigned_v<Int>) throw ConfigError(where(k) + " must be >= 0");
      return static_cast<Int>(i);
    }
    throw ConfigError(where(k) + " must be an integer");
  }

  bool boolean(const std::string& k, bool fallback) {
    if (!has(k)) return fallback;
    const json& v = raw(k);
    if (!v.is_boolean()) throw ConfigError(where(k) + " must be true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& k, const std::string& fallback) {
    if (!has(k)) return fallback;
    const json& v = raw(k);
    if (!v.is_string()) throw ConfigError(where(k) + " must be a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& k, std::vector<double> fallback) {
    if (!has(k)) return fallback;
    const json& v = raw(k);
    if (v.is_number()) return {v.get<double>()};
    if (!v.is_array()) throw ConfigError(where(k) + " must be a list of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(where(k) + " must be a list of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<std::size_t> counts(const std::string& k, std::vector<std::size_t> fallback) {
    if (!has(k)) return fallback;
    const json& v = raw(k);
    if (!v.is_array()) throw ConfigError(where(k) + " must be a list of positive integers");
    std::vector<std::size_t> out;
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<std::int64_t>() <= 0) {
        throw ConfigError(where(k) + " must be a list of positive integers");
      }
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  Section child(const std::string& k) { return Section(raw(k), where(k)); }
  std::string where(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Kernel read_kernel(Section s, int dim) {
  const std::string type = s.string("type", "gaussian");
  if (type != "gaussian") throw ConfigError("model.kernel.type must be 'gaussian' (custom kernels are API-only)");
  const double delta = s.number("delta", 1.0);
  if (!(delta > 0.0)) throw ConfigError("model.kernel.delta must be > 0");
  return Kernel::gaussian(delta, dim);
}

Potential read_potential(Section s, int dim) {
  const std::string type = s.string("type", "isotropic");
  if (type == "isotropic") return Potential::isotropic(s.number("a", 1.0), dim);
  if (type == "quadratic") return Potential::quadratic(s.numbers("matrix", {}), dim);
  throw ConfigError("model.potential.type must be 'isotropic' or 'quadratic'");
}

InitialField read_h0(Section s, int dim) {
  const std::string type = s.string("type", "zero");
  if (type == "zero") return InitialField::zero(dim);
  if (type == "gaussian_bump") {
    return InitialField::gaussian_bump(s.number("amplitude", 1.0), s.number("variance", 1.0), dim);
  }
  throw ConfigError("model.h0.type must be 'zero' or 'gaussian_bump'");
}

std::vector<double> point_of(std::vector<double> v, int dim, const std::string& what) {
  if (v.size() == 1 && dim > 1) v.assign(dim, v[0]);
  if (static_cast<int>(v.size()) != dim) throw ConfigError(what + " must have " + std::to_string(dim) + " entries");
  return v;
}

InitialDistribution read_mu0(Section s, int dim) {
  const std::string type = s.string("type", "gaussian");
  if (type == "gaussian") {
    return InitialDistribution::gaussian(point_of(s.numbers("mean", {0.0}), dim, "model.mu0.mean"),
                                         s.number("variance", 1.0));
  }
  if (type == "uniform") return InitialDistribution::uniform(s.number("low", -1.0), s.number("high", 1.0), dim);
  if (type == "point_mass") return InitialDistribution::point_mass(point_of(s.numbers("at", {0.0}), dim, "model.mu0.at"));
  throw ConfigError("model.mu0.type must be 'gaussian', 'uniform' or 'point_mass'");
}

ModelInstance read_model(Section s) {
  ModelInstance m;
  m.params.alpha = s.number("alpha", 1.0);
  m.params.beta = s.number("beta", 1.0);
  m.params.chi = s.number("chi", 1.0);
  m.params.gamma = s.number("gamma", 1.0);
  m.params.dim = s.integer<int>("dim", 1);
  m.params.validate();
  const int d = m.params.dim;
  m.kernel = s.has("kernel") ? read_kernel(s.child("kernel"), d) : Kernel::gaussian(1.0, d);
  m.potential = s.has("potential") ? read_potential(s.child("potential"), d) : Potential::isotropic(1.0, d);
  m.h0 = s.has("h0") ? read_h0(s.child("h0"), d) : InitialField::zero(d);
  m.mu0 = s.has("mu0") ? read_mu0(s.child("mu0"), d)
                       : InitialDistribution::gaussian(std::vector<double>(d, 0.0), 1.0);
  m.validate();
  return m;
}

ScenarioConfig from_json(const json& root) {
  ScenarioConfig c;
  Section top(root, "");
  if (top.has("experiment")) c.experiment = parse_experiment_kind(top.string("experiment", ""));
  c.seed = top.integer<std::uint64_t>("seed", 1);
  c.output_dir = top.string("output_dir", "");
  if (top.has("model")) c.model = read_model(top.child("model"));

  if (top.has("run")) {
    Section r = top.child("run");
    c.run.epsilon = r.number("epsilon", c.run.epsilon);
    c.horizon = r.number("horizon", c.horizon);
    c.run.n_particles = r.integer<std::size_t>("n_particles", c.run.n_particles);
    c.run.field_method = parse_field_method(r.string("field_method", to_string(c.run.field_method)));
    c.run.grid.half_width = r.number("grid_half_width", c.run.grid.half_width);
    c.run.grid.n_points = r.integer<std::size_t>("grid_points", c.run.grid.n_points);
    c.run.truncation_tol = r.number("truncation_tol", c.run.truncation_tol);
    c.run.refinement = r.integer<unsigned>("refinement", c.run.refinement);
    c.run.zero_noise = r.boolean("zero_noise", c.run.zero_noise);
    c.run.threads = r.integer<int>("threads", c.run.threads);
    c.run.monitors = r.boolean("monitors", c.run.monitors);
    c.run.trajectory_stride = r.integer<std::size_t>("trajectory_stride", c.run.trajectory_stride);
    c.snapshot_times = r.numbers("snapshot_times", {});
  }
  if (top.has("sweep")) {
    Section s = top.child("sweep");
    c.sweep.n_values = s.counts("n_values", {});
    c.sweep.eps_values = s.numbers("eps_values", {});
    c.sweep.thresholds = s.numbers("thresholds", {});
    c.sweep.replications = s.integer<std::size_t>("replications", c.sweep.replications);
    c.sweep.n_ref = s.integer<std::size_t>("n_ref", c.sweep.n_ref);
    if (s.has("reference_seed")) c.sweep.reference_seed = s.integer<std::uint64_t>("reference_seed", 0);
    c.sweep.levels = s.integer<unsigned>("levels", c.sweep.levels);
    c.sweep.slack = s.number("slack", c.sweep.slack);
    c.sweep.t_finite = s.number("t_finite", c.sweep.t_finite);
    c.sweep.storage_cap_mb = s.integer<std::size_t>("storage_cap_mb", c.sweep.storage_cap_mb);
  }
  c.run.seed = c.seed;
  return c;
}

json model_to_json(const ModelInstance& m) {
  json j;
  j["alpha"] = m.params.alpha;
  j["beta"] = m.params.beta;
  j["chi"] = m.params.chi;
  j["gamma"] = m.params.gamma;
  j["dim"] = m.params.dim;
  if (!m.kernel.is_gaussian()) throw UnsupportedError("custom kernels cannot be written to a config file");
  j["kernel"] = {{"type", "gaussian"}, {"delta", m.kernel.delta()}};
  if (m.potential.kind() != Potential::Kind::quadratic) {
    throw UnsupportedError("custom potentials cannot be written to a config file");
  }
  j["potential"] = {{"type", "quadratic"}, {"matrix", m.potential.matrix()}};
  switch (m.h0.kind()) {
    case InitialField::Kind::zero: j["h0"] = {{"type", "zero"}}; break;
    case InitialField::Kind::gaussian_bump:
      j["h0"] = {{"type", "gaussian_bump"}, {"amplitude", m.h0.amplitude()}, {"variance", m.h0.variance()}};
      break;
    case InitialField::Kind::custom: throw UnsupportedError("custom h0 cannot be written to a config file");
  }
  switch (m.mu0.kind()) {
    case InitialDistribution::Kind::gaussian:
      j["mu0"] = {{"type", "gaussian"}, {"mean", m.mu0.location()}, {"variance", m.mu0.spread()}};
      break;
    case InitialDistribution::Kind::uniform:
      j["mu0"] = {{"type", "uniform"}, {"low", m.mu0.spread()}, {"high", m.mu0.upper()}};
      break;
    case InitialDistribution::Kind::point_mass:
      j["mu0"] = {{"type", "point_mass"}, {"at", m.mu0.location()}};
      break;
  }
  return j;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::constants: return "constants";
    case ExperimentKind::simulate: return "simulate";
    case ExperimentKind::poc_finite: return "poc_finite";
    case ExperimentKind::poc_uniform: return "poc_uniform";
    case ExperimentKind::euler_rate: return "euler_rate";
    case ExperimentKind::concentration: return "concentration";
    case ExperimentKind::field_bounds: return "field_bounds";
  }
  return "unknown";
}

ExperimentKind parse_experiment_kind(std::string_view s) {
  std::string k(s);
  for (char& ch : k) ch = ch == '-' ? '_' : ch;
  for (auto kind : {ExperimentKind::constants, ExperimentKind::simulate, ExperimentKind::poc_finite,
                    ExperimentKind::poc_uniform, ExperimentKind::euler_rate, ExperimentKind::concentration,
                    ExperimentKind::field_bounds}) {
    if (to_string(kind) == k) return kind;
  }
  throw ConfigError("unknown experiment '" + std::string(s) + "'");
}

std::size_t ScenarioConfig::n_steps() const {
  if (!(run.epsilon > 0.0)) throw ConfigError("run.epsilon must be > 0");
  if (!(horizon >= 0.0)) throw ConfigError("run.horizon must be >= 0");
  const double steps = horizon / run.epsilon;
  const double rounded = std::round(steps);
  if (std::abs(steps - rounded) > 1e-9 * std::max(1.0, steps)) {
    throw ConfigError("run.horizon must be a multiple of run.epsilon");
  }
  return static_cast<std::size_t>(rounded);
}

EulerConfig ScenarioConfig::euler() const {
  EulerConfig e = run;
  e.seed = seed;
  e.n_steps = n_steps();
  e.snapshot_steps.clear();
  for (double t : snapshot_times) {
    const double s = t / run.epsilon;
    if (t < 0.0 || t > horizon + 1e-12 || std::abs(s - std::round(s)) > 1e-9 * std::max(1.0, s)) {
      throw ConfigError("snapshot time " + std::to_string(t) + " is not a step time within the horizon");
    }
    e.snapshot_steps.push_back(static_cast<std::size_t>(std::round(s)));
  }
  return e;
}

void ScenarioConfig::validate() const {
  model.validate();
  EulerConfig e = euler();
  if (experiment != ExperimentKind::euler_rate) e.validate();
  const auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  switch (experiment) {
    case ExperimentKind::constants:
    case ExperimentKind::simulate:
    case ExperimentKind::field_bounds: break;
    case ExperimentKind::poc_finite:
      need(!sweep.n_values.empty(), "sweep.n_values must be nonempty");
      need(sweep.replications >= 8, "sweep.replications must be >= 8 for moment experiments");
      need(sweep.n_ref >= 1, "sweep.n_ref must be >= 1");
      break;
    case ExperimentKind::poc_uniform:
      need(sweep.replications >= 8, "sweep.replications must be >= 8 for moment experiments");
      need(sweep.slack > 0.0, "sweep.slack must be > 0");
      break;
    case ExperimentKind::euler_rate:
      need(!sweep.eps_values.empty(), "sweep.eps_values must be nonempty");
      need(sweep.replications >= 8, "sweep.replications must be >= 8 for moment experiments");
      for (double eps : sweep.eps_values) need(eps > 0.0 && eps < 1.0, "sweep.eps_values must lie in (0, 1)");
      break;
    case ExperimentKind::concentration:
      need(!sweep.n_values.empty(), "sweep.n_values must be nonempty");
      need(!sweep.thresholds.empty(), "sweep.thresholds must be nonempty");
      need(sweep.replications >= 30, "sweep.replications must be >= 30 for tail experiments");
      for (double eps : sweep.thresholds) need(eps > 0.0, "sweep.thresholds must be > 0");
      need(sweep.t_finite > 0.0 && sweep.t_finite <= horizon, "sweep.t_finite must lie in (0, horizon]");
      break;
  }
}

ScenarioConfig parse_scenario_toml(std::string_view text, const std::string& origin) {
  toml::table tbl;
  try {
    tbl = toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << origin << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(msg.str());
  }
  return from_json(toml_to_json(tbl));
}

ScenarioConfig parse_scenario_json(std::string_view text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return from_json(j);
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  const auto ext = path.extension().string();
  if (ext == ".json") return parse_scenario_json(text, path.string());
  if (ext == ".toml") return parse_scenario_toml(text, path.string());
  throw ConfigError("config file must end in .toml or .json: " + path.string());
}

std::string scenario_to_json(const ScenarioConfig& c, int indent) {
  json j;
  j["experiment"] = to_string(c.experiment);
  j["seed"] = c.seed;
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
  j["model"] = model_to_json(c.model);
  json r;
  r["epsilon"] = c.run.epsilon;
  r["horizon"] = c.horizon;
  r["n_particles"] = c.run.n_particles;
  r["field_method"] = to_string(c.run.field_method);
  r["grid_half_width"] = c.run.grid.half_width;
  r["grid_points"] = c.run.grid.n_points;
  r["truncation_tol"] = c.run.truncation_tol;
  r["refinement"] = c.run.refinement;
  r["zero_noise"] = c.run.zero_noise;
  r["threads"] = c.run.threads;
  r["monitors"] = c.run.monitors;
  r["trajectory_stride"] = c.run.trajectory_stride;
  r["snapshot_times"] = c.snapshot_times;
  j["run"] = r;
  json s;
  s["n_values"] = c.sweep.n_values;
  s["eps_values"] = c.sweep.eps_values;
  s["thresholds"] = c.sweep.thresholds;
  s["replications"] = c.sweep.replications;
  s["n_ref"] = c.sweep.n_ref;
  if (c.sweep.reference_seed) s["reference_seed"] = *c.sweep.reference_seed;
  s["levels"] = c.sweep.levels;
  s["slack"] = c.sweep.slack;
  s["t_finite"] = c.sweep.t_finite;
  s["storage_cap_mb"] = c.sweep.storage_cap_mb;
  j["sweep"] = s;
  return j.dump(indent);
}

}  // namespace kspoc
