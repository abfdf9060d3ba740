#include "kspoc/field.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kspoc/errors.hpp"

namespace kspoc {

namespace {

constexpr std::size_t kDepositBlock = 256;
// Gaussian source modes with delta k^2 / 2 beyond this are below e^{-40} and are kept at zero.
constexpr double kModeCutoffExponent = 40.0;

// Width proxy for custom kernels: variance of the gaussian with the same peak value.
double kernel_width(const Kernel& kernel) {
  if (kernel.is_gaussian()) return kernel.delta();
  const double peak = kernel.sup_norms().value;
  return std::pow(peak, -2.0 / kernel.dim()) / (2.0 * std::numbers::pi);
}

void check_grid_model(const ModelInstance& model) {
  if (model.params.dim != 1) throw UnsupportedError("the grid field evaluator supports d = 1 only");
}

}  // namespace

std::vector<double> apply_Q(std::span<const double> values, const GridSpec& spec, double dt, double alpha) {
  if (dt < 0.0) throw DomainError("apply_Q: dt must be >= 0");
  if (values.size() != spec.n_points) throw ConfigError("apply_Q: value count does not match the grid");
  const Spectral1d grid(spec);
  std::vector<Complex> modes(grid.n_modes());
  grid.forward(values, modes);
  apply_semigroup_modes(grid, modes, dt, alpha);
  std::vector<double> out(grid.size());
  grid.inverse(modes, out);
  return out;
}

double safe_half_width(const ModelInstance& model, const GridSpec& spec, double horizon) {
  if (horizon < 0.0) throw DomainError("safe_half_width: horizon must be >= 0");
  const double delta = kernel_width(model.kernel);
  const double alpha = model.params.alpha;
  const double log_tol = std::log(1e15) + std::max(0.0, -0.5 * std::log(2.0 * std::numbers::pi * delta));
  // Max over theta >= 0 of e^{-alpha theta} phi_{theta+delta}(D): interior optimum or theta = 0.
  const double interior = (log_tol + alpha * delta) / std::sqrt(2.0 * alpha);
  const double at_zero = std::sqrt(2.0 * delta * log_tol);
  const double decay_margin = 0.5 * std::max(interior, at_zero);
  const double margin = std::min(6.0 * std::sqrt(delta + horizon), decay_margin);
  const double limit = spec.half_width - margin - 2.0 * spec.spacing();
  if (!(limit > 0.0)) {
    throw ConfigError("grid half_width " + std::to_string(spec.half_width) + " leaves no safe region (margin " +
                      std::to_string(margin) + ")");
  }
  return limit;
}

std::vector<double> deposit_density(std::span<const double> positions, const Kernel& kernel, const GridSpec& spec,
                                    double safe_limit, std::size_t step) {
  if (positions.empty()) throw ConfigError("deposit_density: ensemble must contain at least one particle");
  if (kernel.dim() != 1) throw UnsupportedError("deposit_density: grid deposit supports d = 1 only");
  spec.validate();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (!(std::abs(positions[i]) <= safe_limit)) throw EscapeError(i, step, positions[i], safe_limit);
  }
  const double h = spec.spacing();
  const double inv_n = 1.0 / static_cast<double>(positions.size());
  std::vector<double> out(spec.n_points, 0.0);
  for (std::size_t j = 0; j < spec.n_points; ++j) {
    const double x = -spec.half_width + h * static_cast<double>(j);
    double s = 0.0;
    for (double xi : positions) {
      const double r = xi - x;
      s += kernel.value(std::span<const double>(&r, 1));
    }
    out[j] = s * inv_n;
  }
  return out;
}

std::vector<double> theta_recursion_step(std::span<const double> theta, std::span<const double> source,
                                         const GridSpec& spec, double eps, double alpha) {
  if (eps < 0.0) throw DomainError("theta_recursion_step: eps must be >= 0");
  if (theta.size() != spec.n_points || source.size() != spec.n_points) {
    throw ConfigError("theta_recursion_step: value count does not match the grid");
  }
  const Spectral1d grid(spec);
  std::vector<Complex> t_modes(grid.n_modes()), s_modes(grid.n_modes());
  grid.forward(theta, t_modes);
  grid.forward(source, s_modes);
  for (std::size_t m = 0; m < t_modes.size(); ++m) {
    const double k = grid.wavenumber(m);
    const double rate = alpha + 0.5 * k * k;
    t_modes[m] = std::exp(-rate * eps) * t_modes[m] + eps * std::exp(-0.5 * rate * eps) * s_modes[m];
  }
  std::vector<double> out(grid.size());
  grid.inverse(t_modes, out);
  return out;
}

// ---------------------------------------------------------------- FieldGrid

FieldGrid::FieldGrid(const ModelInstance& model, GridSpec spec, double horizon)
    : model_((check_grid_model(model), model)),
      spectral_(spec),
      safe_limit_(safe_half_width(model, spec, horizon)),
      theta_modes_(spectral_.n_modes()),
      grad_(spectral_.size(), 0.0) {
  active_modes_ = spectral_.n_modes();
  if (model_.kernel.is_gaussian()) {
    const double k_max = std::sqrt(2.0 * kModeCutoffExponent / model_.kernel.delta());
    const auto m_max = static_cast<std::size_t>(std::ceil(k_max / spectral_.wavenumber(1)));
    active_modes_ = std::min(m_max + 1, spectral_.n_modes() - 1);
  }
  refresh_gradient();
}

void FieldGrid::deposit_modes(std::span<const double> positions, std::span<Complex> out) const {
  const std::size_t n = positions.size();
  const std::size_t modes = active_modes_;
  const double dk = spectral_.wavenumber(1);
  const std::size_t blocks = (n + kDepositBlock - 1) / kDepositBlock;
  // Fixed block partition so the reduction order is independent of the worker count.
  std::vector<Complex> partial(blocks * modes);
#pragma omp parallel for num_threads(threads_) schedule(static)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(blocks); ++b) {
    Complex* acc = partial.data() + static_cast<std::size_t>(b) * modes;
    const std::size_t end = std::min(n, (static_cast<std::size_t>(b) + 1) * kDepositBlock);
    for (std::size_t i = static_cast<std::size_t>(b) * kDepositBlock; i < end; ++i) {
      const Complex w = std::polar(1.0, -dk * positions[i]);
      Complex z(1.0, 0.0);
      for (std::size_t m = 0; m < modes; ++m) {
        acc[m] += z;
        z *= w;
      }
    }
  }
  const double delta = model_.kernel.delta();
  const double scale = 1.0 / (2.0 * spectral_.spec().half_width * static_cast<double>(n));
  std::fill(out.begin(), out.end(), Complex{});
  for (std::size_t m = 0; m < modes; ++m) {
    Complex s{};
    for (std::size_t b = 0; b < blocks; ++b) s += partial[b * modes + m];
    const double k = spectral_.wavenumber(m);
    // Node origin at -L contributes e^{-i k_m L} = (-1)^m.
    const double sign = (m % 2 == 0) ? 1.0 : -1.0;
    out[m] = s * (scale * sign * std::exp(-0.5 * delta * k * k));
  }
}

void FieldGrid::advance(std::span<const double> positions, double eps) {
  if (positions.empty()) throw ConfigError("FieldGrid::advance: ensemble must contain at least one particle");
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (!(std::abs(positions[i]) <= safe_limit_)) throw EscapeError(i, step_, positions[i], safe_limit_);
  }
  if (!model_.kernel.is_gaussian()) {
    advance_with_source(deposit_density(positions, model_.kernel, spec(), safe_limit_, step_), eps);
    return;
  }
  std::vector<Complex> source(theta_modes_.size());
  deposit_modes(positions, source);
  const double alpha = model_.params.alpha;
  for (std::size_t m = 0; m < active_modes_; ++m) {
    const double k = spectral_.wavenumber(m);
    const double rate = alpha + 0.5 * k * k;
    theta_modes_[m] = std::exp(-rate * eps) * theta_modes_[m] + eps * std::exp(-0.5 * rate * eps) * source[m];
  }
  ++step_;
  time_ += eps;
  refresh_gradient();
}

void FieldGrid::advance_with_source(std::span<const double> source_values, double eps) {
  if (eps < 0.0) throw DomainError("FieldGrid::advance: eps must be >= 0");
  if (source_values.size() != spectral_.size()) throw ConfigError("source grid size mismatch");
  std::vector<Complex> source(theta_modes_.size());
  spectral_.forward(source_values, source);
  active_modes_ = spectral_.n_modes();
  const double alpha = model_.params.alpha;
  for (std::size_t m = 0; m < theta_modes_.size(); ++m) {
    const double k = spectral_.wavenumber(m);
    const double rate = alpha + 0.5 * k * k;
    theta_modes_[m] = std::exp(-rate * eps) * theta_modes_[m] + eps * std::exp(-0.5 * rate * eps) * source[m];
  }
  ++step_;
  time_ += eps;
  refresh_gradient();
}

void FieldGrid::refresh_gradient() {
  std::vector<Complex> d(theta_modes_.size());
  derivative_modes(spectral_, theta_modes_, d);
  spectral_.inverse(d, grad_);
  const double beta = model_.params.beta;
  for (double& g : grad_) g *= beta;
  if (model_.h0.kind() != InitialField::Kind::zero) {
    double gx = 0.0;
    for (std::size_t j = 0; j < grad_.size(); ++j) {
      const double x = spectral_.node(j);
      model_.h0.semigroup_gradient(time_, model_.params.alpha, std::span<const double>(&x, 1), {&gx, 1});
      grad_[j] += gx;
    }
  }
}

std::vector<double> FieldGrid::theta_values() const {
  std::vector<double> out(spectral_.size());
  spectral_.inverse(theta_modes_, out);
  return out;
}

std::vector<double> FieldGrid::h_values() const {
  std::vector<double> out = theta_values();
  const double beta = model_.params.beta;
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double x = spectral_.node(j);
    out[j] = beta * out[j] + model_.h0.semigroup_value(time_, model_.params.alpha, std::span<const double>(&x, 1));
  }
  return out;
}

double FieldGrid::grad_h_at(double x) const {
  if (!inside(x)) throw EscapeError(x, safe_limit_);
  return cubic_interpolate(grad_, spec(), x);
}

double FieldGrid::h_at(double x) const {
  if (!inside(x)) throw EscapeError(x, safe_limit_);
  return cubic_interpolate(h_values(), spec(), x);
}

// ---------------------------------------------------------------- HistoryBuffer

HistoryBuffer::HistoryBuffer(double epsilon, int dim, std::size_t n_particles, double truncation_tol)
    : epsilon_(epsilon), dim_(dim), n_particles_(n_particles), truncation_tol_(truncation_tol) {
  if (!(epsilon > 0.0)) throw ConfigError("history step must be > 0");
  if (dim < 1 || dim > kMaxDim) throw ConfigError("history dimension must be in [1, 3]");
  if (n_particles == 0) throw ConfigError("history needs at least one particle");
  if (truncation_tol < 0.0) throw ConfigError("truncation tolerance must be >= 0");
}

void HistoryBuffer::push(std::span<const double> positions) {
  if (positions.size() != n_particles_ * static_cast<std::size_t>(dim_)) {
    throw ConfigError("history snapshot has the wrong size");
  }
  snapshots_.emplace_back(positions.begin(), positions.end());
}

void HistoryBuffer::truncate(double alpha) {
  if (truncation_tol_ <= 0.0) return;
  const double t = static_cast<double>(steps()) * epsilon_;
  while (!snapshots_.empty()) {
    const double end = static_cast<double>(first_ + 1) * epsilon_;
    if (std::exp(-alpha * (t - end)) >= truncation_tol_) break;
    snapshots_.pop_front();
    ++first_;
  }
}

std::span<const double> HistoryBuffer::snapshot(std::size_t k) const {
  if (k < first_ || k >= steps()) throw DomainError("history snapshot index not retained");
  return snapshots_[k - first_];
}

// ---------------------------------------------------------------- direct evaluator

FieldValue evaluate_h_direct(const HistoryBuffer& history, const ModelInstance& model, std::size_t n,
                             std::span<const double> x) {
  if (!model.kernel.is_gaussian()) {
    throw UnsupportedError("the direct evaluator requires a gaussian kernel (heat-convolution closed form)");
  }
  if (n > history.steps()) throw DomainError("evaluate_h_direct: history does not reach the requested step");
  const int dim = history.dim();
  if (static_cast<int>(x.size()) != dim || model.params.dim != dim) {
    throw DomainError("evaluate_h_direct: dimension mismatch");
  }
  const double eps = history.epsilon();
  const double t = static_cast<double>(n) * eps;
  const double alpha = model.params.alpha;
  const double delta = model.kernel.delta();
  const std::size_t n_particles = history.n_particles();

  FieldValue out;
  out.grad.assign(dim, 0.0);
  out.h = model.h0.semigroup_value(t, alpha, x);
  model.h0.semigroup_gradient(t, alpha, x, out.grad);

  const double offset = 0.5 / std::sqrt(3.0);
  const double gl_nodes[2] = {0.5 - offset, 0.5 + offset};
  double sum_h = 0.0;
  std::vector<double> sum_g(dim, 0.0);
  const double tol = history.truncation_tol();
  for (std::size_t k = history.first_retained(); k < n; ++k) {
    if (tol > 0.0 && std::exp(-alpha * (t - static_cast<double>(k + 1) * eps)) < tol) continue;
    const std::span<const double> snap = history.snapshot(k);
    for (double node : gl_nodes) {
      const double s = (static_cast<double>(k) + node) * eps;
      const double theta = t - s;
      const double var = theta + delta;
      const double weight = 0.5 * eps * std::exp(-alpha * theta) / static_cast<double>(n_particles);
      for (std::size_t i = 0; i < n_particles; ++i) {
        double r2 = 0.0;
        for (int c = 0; c < dim; ++c) {
          const double r = snap[i * dim + c] - x[c];
          r2 += r * r;
        }
        const double phi = weight * gaussian_density(r2, var, dim);
        sum_h += phi;
        for (int c = 0; c < dim; ++c) sum_g[c] += phi * (snap[i * dim + c] - x[c]) / var;
      }
    }
  }
  const double beta = model.params.beta;
  out.h += beta * sum_h;
  for (int c = 0; c < dim; ++c) out.grad[c] += beta * sum_g[c];
  return out;
}

std::vector<double> G_theta_closed_form(std::span<const double> positions, std::span<const double> y, double theta,
                                        const ModelInstance& model) {
  if (!model.kernel.is_gaussian()) throw UnsupportedError("G_theta closed form requires a gaussian kernel");
  if (theta < 0.0) throw DomainError("G_theta: theta must be >= 0");
  const int dim = static_cast<int>(y.size());
  if (dim != model.params.dim || positions.size() % dim != 0 || positions.empty()) {
    throw DomainError("G_theta: dimension mismatch");
  }
  const std::size_t n = positions.size() / dim;
  const double var = theta + model.kernel.delta();
  const ModelParams& p = model.params;
  const double prefactor = p.chi * p.beta * std::exp(-p.alpha * theta) / static_cast<double>(n);
  std::vector<double> out(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double r2 = 0.0;
    for (int c = 0; c < dim; ++c) {
      const double r = positions[i * dim + c] - y[c];
      r2 += r * r;
    }
    const double phi = gaussian_density(r2, var, dim);
    for (int c = 0; c < dim; ++c) out[c] += (positions[i * dim + c] - y[c]) / var * phi;
  }
  for (double& v : out) v *= prefactor;
  return out;
}

}  // namespace kspoc
