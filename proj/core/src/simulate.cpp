#include "kspoc/simulate.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "kspoc/errors.hpp"
#include "kspoc/parallel.hpp"
#include "kspoc/rng.hpp"

namespace kspoc {

namespace {

constexpr std::uint64_t kReplicationTag = 0x5245504CULL;  // "REPL"
constexpr unsigned kMaxRefinement = 20;
constexpr char kRecordingMagic[8] = {'K', 'S', 'P', 'O', 'C', 'R', 'F', '1'};

double squared_norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

MomentRow moments_of(const ParticleEnsemble& ens, double eps) {
  MomentRow row;
  row.step = ens.step;
  row.t = static_cast<double>(ens.step) * eps;
  row.mean.assign(ens.dim, 0.0);
  const std::size_t n = ens.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < ens.dim; ++c) {
      const double v = ens.positions[i * ens.dim + c];
      row.mean[c] += v;
      row.m2 += v * v;
    }
  }
  for (double& m : row.mean) m /= static_cast<double>(n);
  row.m2 /= static_cast<double>(n);
  return row;
}

StepOptions step_options(const EulerConfig& cfg) {
  return {cfg.epsilon, cfg.zero_noise, resolve_threads(cfg.threads), cfg.monitors};
}

double mean_squared_gap(std::span<const double> a, std::span<const double> b, int dim) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s / static_cast<double>(a.size() / static_cast<std::size_t>(dim));
}

}  // namespace

std::string to_string(FieldMethod m) { return m == FieldMethod::grid ? "grid" : "direct"; }

FieldMethod parse_field_method(const std::string& s) {
  if (s == "grid") return FieldMethod::grid;
  if (s == "direct") return FieldMethod::direct;
  throw ConfigError("field_method must be 'grid' or 'direct', got '" + s + "'");
}

std::uint64_t EulerConfig::run_seed() const { return derive_seed(seed, kReplicationTag, replication); }

void EulerConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
  if (n_particles == 0) throw ConfigError("particle count N must be >= 1");
  if (refinement > kMaxRefinement) throw ConfigError("refinement levels must be <= 20");
  if (truncation_tol < 0.0) throw ConfigError("truncation_tol must be >= 0");
  if (field_method == FieldMethod::grid) grid.validate();
}

ParticleEnsemble initial_ensemble(const ModelInstance& model, std::size_t n_particles, std::uint64_t seed) {
  ParticleEnsemble ens;
  ens.dim = model.params.dim;
  ens.positions.assign(n_particles * ens.dim, 0.0);
  for (std::size_t i = 0; i < n_particles; ++i) {
    model.mu0.sample(seed, i, std::span<double>(ens.positions.data() + i * ens.dim, ens.dim));
  }
  return ens;
}

// ---------------------------------------------------------------- BrownianPathStore

BrownianPathStore::BrownianPathStore(std::uint64_t seed, int dim, double coarse_eps, unsigned levels)
    : seed_(seed), dim_(dim), coarse_eps_(coarse_eps), fine_eps_(std::ldexp(coarse_eps, -static_cast<int>(levels))),
      levels_(levels) {
  if (levels > kMaxRefinement) throw CapacityError("refinement levels above 20 are not supported");
  if (!(coarse_eps > 0.0)) throw ConfigError("Brownian step must be > 0");
}

void BrownianPathStore::fine_increment(std::size_t particle, std::size_t fine_step, std::span<double> out) const {
  standard_normals(seed_, StreamDomain::brownian, particle, fine_step, out.first(dim_));
  const double scale = std::sqrt(fine_eps_);
  for (int c = 0; c < dim_; ++c) out[c] *= scale;
}

void BrownianPathStore::increment(std::size_t particle, std::size_t step, std::span<double> out) const {
  if (levels_ == 0) {
    fine_increment(particle, step, out);
    return;
  }
  double fine[kMaxDim];
  std::fill(out.begin(), out.begin() + dim_, 0.0);
  const std::size_t per = std::size_t{1} << levels_;
  for (std::size_t j = 0; j < per; ++j) {
    fine_increment(particle, step * per + j, std::span<double>(fine, dim_));
    for (int c = 0; c < dim_; ++c) out[c] += fine[c];
  }
}

// ---------------------------------------------------------------- drift fields

GridDrift::GridDrift(const ModelInstance& model, GridSpec spec, double horizon, int threads)
    : grid_(model, spec, horizon) {
  grid_.set_threads(threads);
}

void GridDrift::grad_h(std::span<const double> x, std::span<double> out) const { out[0] = grid_.grad_h_at(x[0]); }

DirectDrift::DirectDrift(const ModelInstance& model, double eps, std::size_t n_particles, double truncation_tol)
    : model_(model), history_(eps, model.params.dim, n_particles, truncation_tol) {
  if (!model.kernel.is_gaussian()) throw UnsupportedError("the direct field method requires a gaussian kernel");
}

double DirectDrift::safe_limit() const { return std::numeric_limits<double>::infinity(); }

void DirectDrift::grad_h(std::span<const double> x, std::span<double> out) const {
  const FieldValue v = evaluate_h_direct(history_, model_, history_.steps(), x);
  std::copy(v.grad.begin(), v.grad.end(), out.begin());
}

void DirectDrift::advance(std::span<const double> positions, double) {
  history_.push(positions);
  history_.truncate(model_.params.alpha);
}

std::unique_ptr<DriftField> make_drift_field(const ModelInstance& model, const EulerConfig& config) {
  if (config.field_method == FieldMethod::grid) {
    if (model.params.dim != 1) throw ConfigError("field_method 'grid' supports dim = 1 only; use 'direct'");
    return std::make_unique<GridDrift>(model, config.grid, config.horizon(), resolve_threads(config.threads));
  }
  return std::make_unique<DirectDrift>(model, config.epsilon, config.n_particles, config.truncation_tol);
}

// ---------------------------------------------------------------- RecordedField

RecordedField::RecordedField(GridSpec spec, double epsilon, double safe_limit)
    : spec_(spec), epsilon_(epsilon), safe_limit_(safe_limit) {
  spec_.validate();
}

void RecordedField::append(std::span<const double> grad_grid) {
  if (grad_grid.size() != spec_.n_points) throw ConfigError("recorded grid has the wrong size");
  grad_.insert(grad_.end(), grad_grid.begin(), grad_grid.end());
}

std::span<const double> RecordedField::grid(std::size_t step) const {
  if (step >= steps()) {
    throw ConfigError("reference recording has " + std::to_string(steps()) + " steps; step " + std::to_string(step) +
                      " requested");
  }
  return {grad_.data() + step * spec_.n_points, spec_.n_points};
}

double RecordedField::grad_at(std::size_t step, double x) const {
  if (!(std::abs(x) <= safe_limit_)) throw EscapeError(x, safe_limit_);
  return cubic_interpolate(grid(step), spec_, x);
}

void RecordedField::write(const std::filesystem::path& path) const {
  static_assert(std::endian::native == std::endian::little, "recording format is little-endian");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  const std::uint32_t version = 1, dims = 1;
  const std::uint64_t n_steps = steps(), grid_size = spec_.n_points;
  out.write(kRecordingMagic, sizeof kRecordingMagic);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&dims), sizeof dims);
  out.write(reinterpret_cast<const char*>(&n_steps), sizeof n_steps);
  out.write(reinterpret_cast<const char*>(&grid_size), sizeof grid_size);
  out.write(reinterpret_cast<const char*>(&spec_.half_width), sizeof(double));
  out.write(reinterpret_cast<const char*>(&epsilon_), sizeof(double));
  out.write(reinterpret_cast<const char*>(&safe_limit_), sizeof(double));
  out.write(reinterpret_cast<const char*>(grad_.data()), static_cast<std::streamsize>(grad_.size() * sizeof(double)));
  if (!out) throw ConfigError("failed writing " + path.string());
}

RecordedField RecordedField::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open reference recording " + path.string());
  char magic[8];
  std::uint32_t version = 0, dims = 0;
  std::uint64_t n_steps = 0, grid_size = 0;
  double half_width = 0.0, epsilon = 0.0, safe_limit = 0.0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&dims), sizeof dims);
  in.read(reinterpret_cast<char*>(&n_steps), sizeof n_steps);
  in.read(reinterpret_cast<char*>(&grid_size), sizeof grid_size);
  in.read(reinterpret_cast<char*>(&half_width), sizeof half_width);
  in.read(reinterpret_cast<char*>(&epsilon), sizeof epsilon);
  in.read(reinterpret_cast<char*>(&safe_limit), sizeof safe_limit);
  if (!in || std::memcmp(magic, kRecordingMagic, sizeof magic) != 0 || version != 1 || dims != 1) {
    throw ConfigError(path.string() + " is not a version-1 reference recording");
  }
  RecordedField rec(GridSpec{half_width, static_cast<std::size_t>(grid_size)}, epsilon, safe_limit);
  rec.grad_.resize(n_steps * grid_size);
  in.read(reinterpret_cast<char*>(rec.grad_.data()), static_cast<std::streamsize>(rec.grad_.size() * sizeof(double)));
  if (!in) throw ConfigError(path.string() + " is truncated");
  return rec;
}

ReplayDrift::ReplayDrift(std::shared_ptr<const RecordedField> recording) : recording_(std::move(recording)) {
  if (!recording_) throw ConfigError("replay field needs a recording");
}

void ReplayDrift::grad_h(std::span<const double> x, std::span<double> out) const {
  out[0] = cubic_interpolate(recording_->grid(step_), recording_->spec(), x[0]);
}

void ReplayDrift::advance(std::span<const double>, double) { ++step_; }

// ---------------------------------------------------------------- Euler step

void MonitorReport::merge(const MonitorReport& other) {
  if (first_violation.empty()) first_violation = other.first_violation;
  evaluations += other.evaluations;
  grad_violations += other.grad_violations;
  drift_violations += other.drift_violations;
  max_grad = std::max(max_grad, other.max_grad);
  max_grad_excess = std::max(max_grad_excess, other.max_grad_excess);
}

void euler_step(ParticleEnsemble& ensemble, DriftField& field, const ModelInstance& model,
                const BrownianPathStore& noise, const StepOptions& options, MonitorReport* monitor) {
  const int dim = ensemble.dim;
  const std::size_t n = ensemble.size();
  const std::size_t step = ensemble.step;
  const double eps = options.epsilon;
  const double chi = model.params.chi;
  const double limit = field.safe_limit();
  const std::vector<double> previous = ensemble.positions;

  const bool monitoring = options.monitors && monitor != nullptr;
  const double bound = monitoring ? field_gradient_bound(model, static_cast<double>(step) * eps) : 0.0;
  std::vector<double> grad_norm(monitoring ? n : 0), drift_excess(monitoring ? n : 0);

  parallel_for(n, options.threads, [&](std::size_t i) {
    const double* x = previous.data() + i * dim;
    for (int c = 0; c < dim; ++c) {
      if (!(std::abs(x[c]) <= limit)) throw EscapeError(i, step, x[c], limit);
    }
    double grad[kMaxDim], grad_v[kMaxDim], db[kMaxDim] = {0.0, 0.0, 0.0};
    field.grad_h(std::span<const double>(x, dim), std::span<double>(grad, dim));
    model.potential.gradient(std::span<const double>(x, dim), std::span<double>(grad_v, dim));
    if (!options.zero_noise) noise.increment(i, step, std::span<double>(db, dim));
    double drift2 = 0.0;
    for (int c = 0; c < dim; ++c) {
      const double drift = chi * grad[c] - grad_v[c];
      drift2 += drift * drift;
      const double next = x[c] + eps * drift + db[c];
      if (!std::isfinite(next)) {
        std::ostringstream msg;
        msg << "non-finite position for particle " << i << " at step " << step << " (x = " << x[c]
            << ", grad h = " << grad[c] << ", grad V = " << grad_v[c] << ", dB = " << db[c] << ")";
        throw NumericalFault(msg.str());
      }
      ensemble.positions[i * dim + c] = next;
    }
    if (monitoring) {
      grad_norm[i] = std::sqrt(squared_norm(std::span<const double>(grad, dim)));
      const double allowed = chi * (bound + kFieldBoundTolerance) + std::sqrt(squared_norm({grad_v, std::size_t(dim)}));
      drift_excess[i] = std::sqrt(drift2) - allowed;
    }
  });

  if (monitoring) {
    for (std::size_t i = 0; i < n; ++i) {
      ++monitor->evaluations;
      monitor->max_grad = std::max(monitor->max_grad, grad_norm[i]);
      monitor->max_grad_excess = std::max(monitor->max_grad_excess, grad_norm[i] - bound);
      if (grad_norm[i] > bound + kFieldBoundTolerance) {
        ++monitor->grad_violations;
        if (monitor->first_violation.empty()) {
          std::ostringstream msg;
          msg << "|grad h| = " << grad_norm[i] << " exceeds bound " << bound << " at step " << step << ", particle "
              << i << ", x = " << previous[i * dim];
          monitor->first_violation = msg.str();
        }
      }
      if (drift_excess[i] > 1e-12) ++monitor->drift_violations;
    }
  }

  field.advance(previous, eps);
  ++ensemble.step;
}

// ---------------------------------------------------------------- runs

namespace {

void validate_run(const EulerConfig& config, const ModelInstance& model) {
  config.validate();
  model.validate();
}

void take_snapshot(const DriftField& field, double eps, std::vector<FieldSnapshot>& out) {
  const auto* grid = dynamic_cast<const GridDrift*>(&field);
  if (grid == nullptr) throw ConfigError("field snapshots require field_method 'grid'");
  const FieldGrid& g = grid->grid();
  FieldSnapshot snap;
  snap.step = g.step();
  snap.t = static_cast<double>(g.step()) * eps;
  snap.x.resize(g.spectral().size());
  for (std::size_t j = 0; j < snap.x.size(); ++j) snap.x[j] = g.spectral().node(j);
  snap.h = g.h_values();
  snap.theta = g.theta_values();
  snap.grad_h = g.grad_values();
  out.push_back(std::move(snap));
}

}  // namespace

RunRecord run_particle_system(const EulerConfig& config, const ModelInstance& model, const StepObserver& observer) {
  validate_run(config, model);
  const std::uint64_t seed = config.run_seed();
  RunRecord rec;
  rec.final_state = initial_ensemble(model, config.n_particles, seed);
  ParticleEnsemble& ens = rec.final_state;
  std::unique_ptr<DriftField> field = make_drift_field(model, config);
  const BrownianPathStore noise(seed, model.params.dim, config.epsilon, config.refinement);
  const StepOptions options = step_options(config);
  rec.second_moment_level = second_moment_level(model);

  std::vector<std::size_t> snaps = config.snapshot_steps;
  std::sort(snaps.begin(), snaps.end());
  auto record = [&] {
    rec.moments.push_back(moments_of(ens, config.epsilon));
    rec.max_m2 = std::max(rec.max_m2, rec.moments.back().m2);
    if (config.trajectory_stride > 0 && ens.step % config.trajectory_stride == 0) {
      rec.trajectory.push_back({ens.step, static_cast<double>(ens.step) * config.epsilon, ens.positions});
    }
    if (std::binary_search(snaps.begin(), snaps.end(), ens.step)) take_snapshot(*field, config.epsilon, rec.snapshots);
  };

  record();
  for (std::size_t n = 0; n < config.n_steps; ++n) {
    euler_step(ens, *field, model, noise, options, &rec.monitors);
    record();
    if (observer) observer(ens, *field);
  }
  return rec;
}

RecordedField simulate_nonlinear_reference(const EulerConfig& config, const ModelInstance& model,
                                           std::size_t cap_bytes) {
  validate_run(config, model);
  if (config.field_method != FieldMethod::grid || model.params.dim != 1) {
    throw ConfigError("reference recordings require field_method 'grid' and dim = 1");
  }
  const std::size_t required = (config.n_steps + 1) * config.grid.n_points * sizeof(double);
  if (required > cap_bytes) {
    throw CapacityError("reference recording needs " + std::to_string(required) + " bytes; raise the storage cap to at least " +
                        std::to_string(required) + " (current cap " + std::to_string(cap_bytes) + ")");
  }
  const std::uint64_t seed = config.run_seed();
  ParticleEnsemble ens = initial_ensemble(model, config.n_particles, seed);
  GridDrift field(model, config.grid, config.horizon(), resolve_threads(config.threads));
  const BrownianPathStore noise(seed, model.params.dim, config.epsilon, config.refinement);
  const StepOptions options = step_options(config);
  RecordedField rec(config.grid, config.epsilon, field.safe_limit());
  rec.append(field.grid().grad_values());
  MonitorReport monitor;
  for (std::size_t n = 0; n < config.n_steps; ++n) {
    euler_step(ens, field, model, noise, options, &monitor);
    rec.append(field.grid().grad_values());
  }
  return rec;
}

double DeviationSeries::sup_mean() const {
  return mean.empty() ? 0.0 : *std::max_element(mean.begin(), mean.end());
}

DeviationSeries run_coupled_poc(const CoupledRunConfig& cc, const ModelInstance& model) {
  validate_run(cc.system, model);
  const EulerConfig& sys = cc.system;
  if (!cc.reference) throw ConfigError("coupled run needs a reference recording");
  if (sys.field_method != FieldMethod::grid || model.params.dim != 1) {
    throw ConfigError("coupled runs require field_method 'grid' and dim = 1");
  }
  if (cc.reference->steps() < sys.n_steps) {
    throw ConfigError("reference recording covers " + std::to_string(cc.reference->steps()) +
                      " steps, shorter than the coupled horizon of " + std::to_string(sys.n_steps) + " steps");
  }
  if (cc.reference->epsilon() != sys.epsilon) throw ConfigError("reference step size differs from the coupled run");
  if (cc.replications == 0) throw ConfigError("coupled run needs at least one replication");

  const std::size_t R = cc.replications;
  const std::size_t steps = sys.n_steps + 1;
  std::vector<std::vector<double>> dev(R, std::vector<double>(steps, 0.0));
  std::vector<MonitorReport> monitors(R);

  parallel_for(R, resolve_threads(sys.threads), [&](std::size_t r) {
    EulerConfig cfg = sys;
    cfg.replication = r;
    const std::uint64_t seed = cfg.run_seed();
    ParticleEnsemble x = initial_ensemble(model, cfg.n_particles, seed);
    ParticleEnsemble xbar = x;
    GridDrift live(model, cfg.grid, cfg.horizon(), 1);
    ReplayDrift replay(cc.reference);
    const BrownianPathStore noise(seed, model.params.dim, cfg.epsilon, cfg.refinement);
    StepOptions options = step_options(cfg);
    options.threads = 1;
    try {
      for (std::size_t n = 0; n < cfg.n_steps; ++n) {
        euler_step(x, live, model, noise, options, &monitors[r]);
        euler_step(xbar, replay, model, noise, options, &monitors[r]);
        dev[r][n + 1] = mean_squared_gap(x.positions, xbar.positions, x.dim);
      }
    } catch (const std::exception& e) {
      throw RunError("replication " + std::to_string(r) + ": " + e.what());
    }
  });

  DeviationSeries out;
  out.t.resize(steps);
  out.mean.assign(steps, 0.0);
  out.std_error.assign(steps, 0.0);
  for (std::size_t n = 0; n < steps; ++n) {
    out.t[n] = static_cast<double>(n) * sys.epsilon;
    double s = 0.0, s2 = 0.0;
    for (std::size_t r = 0; r < R; ++r) s += dev[r][n];
    const double mean = s / static_cast<double>(R);
    for (std::size_t r = 0; r < R; ++r) s2 += (dev[r][n] - mean) * (dev[r][n] - mean);
    out.mean[n] = mean;
    out.std_error[n] = R > 1 ? std::sqrt(s2 / static_cast<double>(R - 1) / static_cast<double>(R)) : 0.0;
  }
  for (std::size_t r = 0; r < R; ++r) {
    out.per_replication_sup.push_back(*std::max_element(dev[r].begin(), dev[r].end()));
    out.monitors.merge(monitors[r]);
  }
  return out;
}

namespace {

std::vector<std::vector<double>> run_sampled(const EulerConfig& cfg, const ModelInstance& model, std::size_t stride,
                                             MonitorReport& monitor) {
  const std::uint64_t seed = cfg.run_seed();
  ParticleEnsemble ens = initial_ensemble(model, cfg.n_particles, seed);
  std::unique_ptr<DriftField> field = make_drift_field(model, cfg);
  const BrownianPathStore noise(seed, model.params.dim, cfg.epsilon, cfg.refinement);
  const StepOptions options = step_options(cfg);
  std::vector<std::vector<double>> states{ens.positions};
  for (std::size_t n = 0; n < cfg.n_steps; ++n) {
    euler_step(ens, *field, model, noise, options, &monitor);
    if ((n + 1) % stride == 0) states.push_back(ens.positions);
  }
  return states;
}

void check_refinement_cap(const EulerConfig& config, unsigned levels, const ModelInstance& model, std::size_t copies,
                          std::size_t cap_bytes) {
  if (levels > kMaxRefinement) throw CapacityError("refinement levels above 20 exceed the supported range");
  const std::size_t required =
      copies * (config.n_steps + 1) * config.n_particles * static_cast<std::size_t>(model.params.dim) * sizeof(double);
  if (required > cap_bytes) {
    throw CapacityError("refinement needs " + std::to_string(required) + " bytes of trajectory storage; cap is " +
                        std::to_string(cap_bytes));
  }
}

}  // namespace

RefinedTrajectory refine_reference(const EulerConfig& config, unsigned levels, const ModelInstance& model,
                                   std::size_t cap_bytes) {
  validate_run(config, model);
  check_refinement_cap(config, levels, model, 1, cap_bytes);
  EulerConfig fine = config;
  const std::size_t per = std::size_t{1} << levels;
  fine.epsilon = std::ldexp(config.epsilon, -static_cast<int>(levels));
  fine.n_steps = config.n_steps * per;
  fine.refinement = 0;
  RefinedTrajectory out;
  out.levels = levels;
  out.fine_epsilon = fine.epsilon;
  out.states = run_sampled(fine, model, per, out.monitors);
  return out;
}

RefinementPair run_refinement_pair(const EulerConfig& config, unsigned levels, const ModelInstance& model,
                                   std::size_t cap_bytes) {
  validate_run(config, model);
  check_refinement_cap(config, levels, model, 2, cap_bytes);
  RefinementPair pair;
  EulerConfig coarse = config;
  coarse.refinement = levels;
  MonitorReport coarse_monitor;
  pair.coarse = run_sampled(coarse, model, 1, coarse_monitor);
  pair.fine = refine_reference(config, levels, model, cap_bytes);
  pair.fine.monitors.merge(coarse_monitor);
  return pair;
}

}  // namespace kspoc
