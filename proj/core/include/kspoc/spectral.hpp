#ifndef KSPOC_SPECTRAL_HPP
#define KSPOC_SPECTRAL_HPP

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace kspoc {

// Periodic 1-D grid on [-L, L) with nodes x_j = -L + j h, h = 2L / n.
struct GridSpec {
  double half_width = 24.0;
  std::size_t n_points = 4096;

  double spacing() const { return 2.0 * half_width / static_cast<double>(n_points); }
  void validate() const;
};

using Complex = std::complex<double>;

// Real <-> Fourier transforms on a GridSpec. Coefficients are normalized so that
// values_j = sum_m modes_m exp(2 pi i j m / n) (Hermitian half spectrum, n/2 + 1 modes).
// Copies share the FFTW plans; transforms are safe to call concurrently.
class Spectral1d {
 public:
  explicit Spectral1d(GridSpec spec);

  const GridSpec& spec() const { return spec_; }
  std::size_t size() const { return spec_.n_points; }
  std::size_t n_modes() const { return spec_.n_points / 2 + 1; }
  double spacing() const { return spec_.spacing(); }
  double node(std::size_t j) const { return -spec_.half_width + spacing() * static_cast<double>(j); }
  // Angular wavenumber of mode m: 2 pi m / (2L).
  double wavenumber(std::size_t m) const;

  void forward(std::span<const double> values, std::span<Complex> modes) const;
  void inverse(std::span<const Complex> modes, std::span<double> values) const;

 private:
  struct Plans;
  GridSpec spec_;
  std::shared_ptr<const Plans> plans_;
};

// Multiply modes by e^{-(alpha + k^2/2) dt}: the semigroup Q_dt in Fourier space.
void apply_semigroup_modes(const Spectral1d& grid, std::span<Complex> modes, double dt, double alpha);

// Spectral derivative d/dx of the function represented by `modes` (Nyquist mode dropped).
void derivative_modes(const Spectral1d& grid, std::span<const Complex> modes, std::span<Complex> out);

// Cubic (4-point Lagrange) interpolation of node values at x. Requires 1 <= floor((x+L)/h) <= n - 3.
double cubic_interpolate(std::span<const double> values, const GridSpec& spec, double x);

}  // namespace kspoc

#endif  // KSPOC_SPECTRAL_HPP
