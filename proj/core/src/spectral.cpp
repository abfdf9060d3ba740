#include "kspoc/spectral.hpp"

#include <fftw3.h>

#include <bit>
#include <cmath>
#include <mutex>
#include <numbers>

#include "kspoc/errors.hpp"

namespace kspoc {

namespace {

// FFTW planning is not thread-safe; execution of existing plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

void GridSpec::validate() const {
  if (!(half_width > 0.0) || !std::isfinite(half_width)) throw ConfigError("grid half_width must be > 0");
  if (n_points < 16 || !std::has_single_bit(n_points)) throw ConfigError("grid n_points must be a power of two >= 16");
}

struct Spectral1d::Plans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;

  explicit Plans(std::size_t n) {
    std::vector<double> real(n);
    std::vector<Complex> modes(n / 2 + 1);
    auto* cplx = reinterpret_cast<fftw_complex*>(modes.data());
    const int size = static_cast<int>(n);
    std::lock_guard lock(planner_mutex());
    forward = fftw_plan_dft_r2c_1d(size, real.data(), cplx, FFTW_ESTIMATE | FFTW_UNALIGNED);
    inverse = fftw_plan_dft_c2r_1d(size, cplx, real.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  }

  ~Plans() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(inverse);
  }

  Plans(const Plans&) = delete;
  Plans& operator=(const Plans&) = delete;
};

Spectral1d::Spectral1d(GridSpec spec) : spec_(spec) {
  spec_.validate();
  plans_ = std::make_shared<const Plans>(spec_.n_points);
}

double Spectral1d::wavenumber(std::size_t m) const {
  return std::numbers::pi * static_cast<double>(m) / spec_.half_width;
}

void Spectral1d::forward(std::span<const double> values, std::span<Complex> modes) const {
  std::vector<double> in(values.begin(), values.end());
  fftw_execute_dft_r2c(plans_->forward, in.data(), reinterpret_cast<fftw_complex*>(modes.data()));
  const double scale = 1.0 / static_cast<double>(size());
  for (auto& c : modes) c *= scale;
}

void Spectral1d::inverse(std::span<const Complex> modes, std::span<double> values) const {
  // c2r overwrites its input.
  std::vector<Complex> scratch(modes.begin(), modes.end());
  fftw_execute_dft_c2r(plans_->inverse, reinterpret_cast<fftw_complex*>(scratch.data()), values.data());
}

void apply_semigroup_modes(const Spectral1d& grid, std::span<Complex> modes, double dt, double alpha) {
  if (dt < 0.0) throw DomainError("semigroup step dt must be >= 0");
  for (std::size_t m = 0; m < modes.size(); ++m) {
    const double k = grid.wavenumber(m);
    modes[m] *= std::exp(-(alpha + 0.5 * k * k) * dt);
  }
}

void derivative_modes(const Spectral1d& grid, std::span<const Complex> modes, std::span<Complex> out) {
  const std::size_t nyquist = grid.n_modes() - 1;
  for (std::size_t m = 0; m < modes.size(); ++m) {
    out[m] = (m == nyquist) ? Complex{} : modes[m] * Complex(0.0, grid.wavenumber(m));
  }
}

double cubic_interpolate(std::span<const double> values, const GridSpec& spec, double x) {
  const double h = spec.spacing();
  const double u = (x + spec.half_width) / h;
  const auto j = static_cast<std::ptrdiff_t>(std::floor(u));
  const auto n = static_cast<std::ptrdiff_t>(values.size());
  if (j < 1 || j > n - 3) throw EscapeError(x, spec.half_width - 2.0 * h);
  const double s = u - static_cast<double>(j);
  const double f0 = values[j - 1], f1 = values[j], f2 = values[j + 1], f3 = values[j + 2];
  // Lagrange basis on nodes -1, 0, 1, 2.
  const double w0 = -s * (s - 1.0) * (s - 2.0) / 6.0;
  const double w1 = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0;
  const double w2 = -(s + 1.0) * s * (s - 2.0) / 2.0;
  const double w3 = (s + 1.0) * s * (s - 1.0) / 6.0;
  return w0 * f0 + w1 * f1 + w2 * f2 + w3 * f3;
}

}  // namespace kspoc
