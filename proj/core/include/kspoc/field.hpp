#ifndef KSPOC_FIELD_HPP
#define KSPOC_FIELD_HPP

// Chemical field h(t, x) = Q_t h0(x) + beta Theta_t(x), where Theta_t is the time
// convolution of the decaying heat semigroup with the deposited source g * mu^N.
//
// Two evaluators:
//  - FieldGrid: d = 1, Theta kept as Fourier modes on a periodic grid and advanced by the
//    exact semigroup recursion Theta_{n+1} = Q_eps Theta_n + (int_0^eps Q_r dr) S_n, with
//    the inner integral taken as eps Q_{eps/2}.
//  - evaluate_h_direct: literal sum over the stored history (any d, gaussian kernels),
//    used as the oracle for the grid evaluator.

#include <cmath>
#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "kspoc/model.hpp"
#include "kspoc/spectral.hpp"

namespace kspoc {

// e^{-alpha dt} times the heat semigroup (generator 1/2 Laplacian) at time dt, applied to grid values
// by circular convolution.
std::vector<double> apply_Q(std::span<const double> values, const GridSpec& spec, double dt, double alpha);

// Largest |x| at which particles may sit so that the circular wrap-around of every
// source contribution stays below ~1e-12: L - min(6 sqrt(delta + T), D/2), with D the
// distance at which e^{-alpha theta} phi_{theta + delta}(D) drops below 1e-15 for all theta >= 0.
double safe_half_width(const ModelInstance& model, const GridSpec& spec, double horizon);

// (1/N) sum_i g(X_i - x_j) sampled at the grid nodes (d = 1). Throws EscapeError naming the
// particle when |X_i| > safe_limit, ConfigError for an empty ensemble.
std::vector<double> deposit_density(std::span<const double> positions, const Kernel& kernel, const GridSpec& spec,
                                    double safe_limit, std::size_t step = 0);

// One step of Theta_{n+1} = Q_eps Theta_n + eps Q_{eps/2} source on grid values.
std::vector<double> theta_recursion_step(std::span<const double> theta, std::span<const double> source,
                                         const GridSpec& spec, double eps, double alpha);

class FieldGrid {
 public:
  // Field at t = 0 (Theta = 0). `horizon` sizes the safe region. Throws UnsupportedError for dim != 1.
  FieldGrid(const ModelInstance& model, GridSpec spec, double horizon);

  std::size_t step() const { return step_; }
  double time() const { return time_; }
  const GridSpec& spec() const { return spectral_.spec(); }
  const Spectral1d& spectral() const { return spectral_; }
  double safe_limit() const { return safe_limit_; }
  bool inside(double x) const { return std::abs(x) <= safe_limit_; }

  // Advance by eps with the source deposited by `positions` (the state Y_n held over [t, t + eps)).
  // Throws EscapeError naming the particle when one lies outside the safe region.
  void advance(std::span<const double> positions, double eps);
  // Advance with an explicit source sampled at the grid nodes.
  void advance_with_source(std::span<const double> source_values, double eps);

  // Theta (without the beta factor) at the nodes.
  std::vector<double> theta_values() const;
  std::vector<double> h_values() const;
  // Gradient of h at the nodes for the current time (spectral derivative plus closed-form grad Q_t h0).
  const std::vector<double>& grad_values() const { return grad_; }

  // Cubic interpolation of the gradient grid; EscapeError outside the safe region.
  double grad_h_at(double x) const;
  double h_at(double x) const;

  // Worker count for the source deposit; the result does not depend on it.
  void set_threads(int threads) { threads_ = threads < 1 ? 1 : threads; }

 private:
  void deposit_modes(std::span<const double> positions, std::span<Complex> out) const;
  void refresh_gradient();

  ModelInstance model_;
  Spectral1d spectral_;
  double safe_limit_;
  std::size_t step_ = 0;
  double time_ = 0.0;
  std::size_t active_modes_;  // modes beyond this index stay zero for gaussian kernels
  std::vector<Complex> theta_modes_;
  std::vector<double> grad_;
  int threads_ = 1;
};

// Per-step particle snapshots: snapshot k holds Y_k (N x d, row-major).
class HistoryBuffer {
 public:
  HistoryBuffer(double epsilon, int dim, std::size_t n_particles, double truncation_tol = 0.0);

  void push(std::span<const double> positions);
  // Drop snapshots whose weight e^{-alpha (t - s)} at time t = current_step * eps is below the tolerance.
  void truncate(double alpha);

  double epsilon() const { return epsilon_; }
  int dim() const { return dim_; }
  std::size_t n_particles() const { return n_particles_; }
  double truncation_tol() const { return truncation_tol_; }
  // Number of completed steps (including dropped ones).
  std::size_t steps() const { return first_ + snapshots_.size(); }
  std::size_t first_retained() const { return first_; }
  std::size_t retained() const { return snapshots_.size(); }
  std::span<const double> snapshot(std::size_t k) const;

 private:
  double epsilon_;
  int dim_;
  std::size_t n_particles_;
  double truncation_tol_;
  std::size_t first_ = 0;
  std::deque<std::vector<double>> snapshots_;
};

struct FieldValue {
  double h = 0.0;
  std::vector<double> grad;
};

// h(n eps, x) and grad h from the literal history sum, each interval integral by 2-point
// Gauss-Legendre in s. Requires a gaussian kernel (UnsupportedError otherwise) and n <= history.steps().
FieldValue evaluate_h_direct(const HistoryBuffer& history, const ModelInstance& model, std::size_t n,
                             std::span<const double> x);

// G_theta(x_1..x_N, y) = (chi beta e^{-alpha theta} / N) sum_i (x_i - y)/(theta + delta) phi_{theta+delta}(x_i - y),
// positions N x d row-major. Gaussian kernels only.
std::vector<double> G_theta_closed_form(std::span<const double> positions, std::span<const double> y, double theta,
                                        const ModelInstance& model);

}  // namespace kspoc

#endif  // KSPOC_FIELD_HPP
