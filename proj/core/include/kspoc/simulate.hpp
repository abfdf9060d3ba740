#ifndef KSPOC_SIMULATE_HPP
#define KSPOC_SIMULATE_HPP

// Explicit Euler scheme for the N-particle system
//   Y_{n+1} = Y_n + dB_n + eps (chi grad h(n eps, Y_n) - grad V(Y_n)),
// where the field at step n carries the memory of Y_0..Y_{n-1} (source piecewise constant per step).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kspoc/field.hpp"
#include "kspoc/model.hpp"
#include "kspoc/spectral.hpp"

namespace kspoc {

enum class FieldMethod { grid, direct };

std::string to_string(FieldMethod m);
FieldMethod parse_field_method(const std::string& s);

struct EulerConfig {
  double epsilon = 0.01;
  std::size_t n_steps = 500;
  std::size_t n_particles = 128;
  std::uint64_t seed = 1;
  std::uint64_t replication = 0;
  FieldMethod field_method = FieldMethod::grid;
  GridSpec grid{};
  // Brownian increments are exact sums of 2^refinement increments at step eps / 2^refinement.
  unsigned refinement = 0;
  // Drift-only test mode.
  bool zero_noise = false;
  // History truncation for the direct evaluator (0 keeps everything).
  double truncation_tol = 0.0;
  int threads = 1;
  bool monitors = true;
  // Trajectory rows are kept every `trajectory_stride` steps; 0 disables trajectory recording.
  std::size_t trajectory_stride = 0;
  std::vector<std::size_t> snapshot_steps;

  double horizon() const { return epsilon * static_cast<double>(n_steps); }
  // Seed of this replication's random streams.
  std::uint64_t run_seed() const;
  void validate() const;
};

struct ParticleEnsemble {
  int dim = 1;
  std::size_t step = 0;
  std::vector<double> positions;  // N x dim, row-major

  std::size_t size() const { return positions.size() / static_cast<std::size_t>(dim); }
  std::span<const double> particle(std::size_t i) const { return {positions.data() + i * dim, std::size_t(dim)}; }
};

// i.i.d. draws from mu0 keyed by (seed, particle).
ParticleEnsemble initial_ensemble(const ModelInstance& model, std::size_t n_particles, std::uint64_t seed);

// Brownian increments generated from counter-based per-particle streams at the finest dyadic
// level eps / 2^levels. The increment over a coarse step is the sum of its 2^levels fine increments,
// accumulated in fine-step order.
class BrownianPathStore {
 public:
  BrownianPathStore(std::uint64_t seed, int dim, double coarse_eps, unsigned levels);

  double coarse_step() const { return coarse_eps_; }
  double fine_step() const { return fine_eps_; }
  unsigned levels() const { return levels_; }

  void fine_increment(std::size_t particle, std::size_t fine_step, std::span<double> out) const;
  void increment(std::size_t particle, std::size_t step, std::span<double> out) const;

 private:
  std::uint64_t seed_;
  int dim_;
  double coarse_eps_;
  double fine_eps_;
  unsigned levels_;
};

// Gradient of the chemical field as seen by the particles at the current step.
class DriftField {
 public:
  virtual ~DriftField() = default;
  virtual std::size_t step() const = 0;
  virtual double safe_limit() const = 0;
  virtual void grad_h(std::span<const double> x, std::span<double> out) const = 0;
  // Advance one step; `positions` is the ensemble state that was in force over the step.
  virtual void advance(std::span<const double> positions, double eps) = 0;
};

class GridDrift final : public DriftField {
 public:
  GridDrift(const ModelInstance& model, GridSpec spec, double horizon, int threads = 1);
  std::size_t step() const override { return grid_.step(); }
  double safe_limit() const override { return grid_.safe_limit(); }
  void grad_h(std::span<const double> x, std::span<double> out) const override;
  void advance(std::span<const double> positions, double eps) override { grid_.advance(positions, eps); }
  const FieldGrid& grid() const { return grid_; }

 private:
  FieldGrid grid_;
};

class DirectDrift final : public DriftField {
 public:
  DirectDrift(const ModelInstance& model, double eps, std::size_t n_particles, double truncation_tol = 0.0);
  std::size_t step() const override { return history_.steps(); }
  double safe_limit() const override;
  void grad_h(std::span<const double> x, std::span<double> out) const override;
  void advance(std::span<const double> positions, double eps) override;
  const HistoryBuffer& history() const { return history_; }

 private:
  ModelInstance model_;
  HistoryBuffer history_;
};

// Per-step gradient grids recorded from a reference run (d = 1). Binary layout in docs/reference_field_format.md.
class RecordedField {
 public:
  RecordedField(GridSpec spec, double epsilon, double safe_limit);

  void append(std::span<const double> grad_grid);
  std::size_t steps() const { return grad_.size() / spec_.n_points; }
  const GridSpec& spec() const { return spec_; }
  double epsilon() const { return epsilon_; }
  double safe_limit() const { return safe_limit_; }
  std::span<const double> grid(std::size_t step) const;
  double grad_at(std::size_t step, double x) const;
  std::size_t bytes() const { return grad_.size() * sizeof(double); }

  void write(const std::filesystem::path& path) const;
  static RecordedField read(const std::filesystem::path& path);

 private:
  GridSpec spec_;
  double epsilon_;
  double safe_limit_;
  std::vector<double> grad_;
};

// Exogenous drift field replayed from a recording; ignores the positions it is advanced with.
class ReplayDrift final : public DriftField {
 public:
  explicit ReplayDrift(std::shared_ptr<const RecordedField> recording);
  std::size_t step() const override { return step_; }
  double safe_limit() const override { return recording_->safe_limit(); }
  void grad_h(std::span<const double> x, std::span<double> out) const override;
  void advance(std::span<const double> positions, double eps) override;

 private:
  std::shared_ptr<const RecordedField> recording_;
  std::size_t step_ = 0;
};

std::unique_ptr<DriftField> make_drift_field(const ModelInstance& model, const EulerConfig& config);

struct MonitorReport {
  std::size_t evaluations = 0;
  std::size_t grad_violations = 0;
  std::size_t drift_violations = 0;
  double max_grad = 0.0;        // max |grad h| over all evaluations
  double max_grad_excess = -1e300;  // max of |grad h| - bound(t)
  std::string first_violation;

  void merge(const MonitorReport& other);
};

inline constexpr double kFieldBoundTolerance = 1e-3;

struct StepOptions {
  double epsilon = 0.01;
  bool zero_noise = false;
  int threads = 1;
  bool monitors = true;
};

// One Euler step: drift from the frozen field at the current step, position update, then the field is
// advanced with the pre-update positions. Throws EscapeError / NumericalFault with particle and step.
void euler_step(ParticleEnsemble& ensemble, DriftField& field, const ModelInstance& model,
                const BrownianPathStore& noise, const StepOptions& options, MonitorReport* monitor = nullptr);

struct MomentRow {
  std::size_t step = 0;
  double t = 0.0;
  std::vector<double> mean;
  double m2 = 0.0;  // mean of |Y|^2
};

struct TrajectoryRow {
  std::size_t step = 0;
  double t = 0.0;
  std::vector<double> positions;
};

struct FieldSnapshot {
  std::size_t step = 0;
  double t = 0.0;
  std::vector<double> x, h, theta, grad_h;
};

struct RunRecord {
  std::vector<MomentRow> moments;
  std::vector<TrajectoryRow> trajectory;
  std::vector<FieldSnapshot> snapshots;
  MonitorReport monitors;
  ParticleEnsemble final_state;
  std::optional<double> second_moment_level;  // level from the second-moment stability bound, if v* > 0
  double max_m2 = 0.0;
};

// Called after every step with the ensemble at the new step and the advanced field.
using StepObserver = std::function<void(const ParticleEnsemble&, const DriftField&)>;

RunRecord run_particle_system(const EulerConfig& config, const ModelInstance& model,
                              const StepObserver& observer = {});

// Records grad h grids at steps 0..n_steps from an independent run with config.n_particles = N_ref.
// Refuses with CapacityError (naming the required cap) when the recording exceeds cap_bytes.
RecordedField simulate_nonlinear_reference(const EulerConfig& config, const ModelInstance& model,
                                           std::size_t cap_bytes = std::size_t{1} << 31);

struct CoupledRunConfig {
  EulerConfig system;  // interacting system (grid method); replications use run seeds of 0..R-1
  std::shared_ptr<const RecordedField> reference;
  std::size_t replications = 1;
};

struct DeviationSeries {
  std::vector<double> t;
  std::vector<double> mean;       // mean over replications of (1/N) sum_i |X^{i,N}_n - Xbar^i_n|^2
  std::vector<double> std_error;  // across replications
  std::vector<double> per_replication_sup;
  MonitorReport monitors;

  double sup_mean() const;
};

DeviationSeries run_coupled_poc(const CoupledRunConfig& cc, const ModelInstance& model);

struct RefinedTrajectory {
  std::size_t levels = 0;
  double fine_epsilon = 0.0;
  std::vector<std::vector<double>> states;  // positions at coarse steps 0..n_steps
  MonitorReport monitors;
};

// Positions of the coarse-step run (refinement = levels) and the fine run at eps / 2^levels driven by the
// same Brownian path, both sampled at the coarse step times.
struct RefinementPair {
  std::vector<std::vector<double>> coarse;
  RefinedTrajectory fine;
};

RefinedTrajectory refine_reference(const EulerConfig& config, unsigned levels, const ModelInstance& model,
                                   std::size_t cap_bytes = std::size_t{1} << 31);
RefinementPair run_refinement_pair(const EulerConfig& config, unsigned levels, const ModelInstance& model,
                                   std::size_t cap_bytes = std::size_t{1} << 31);

}  // namespace kspoc

#endif  // KSPOC_SIMULATE_HPP
