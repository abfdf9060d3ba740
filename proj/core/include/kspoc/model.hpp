#ifndef KSPOC_MODEL_HPP
#define KSPOC_MODEL_HPP

// Problem instance for the parabolic-parabolic Keller-Segel particle system:
// parameters, dispersal kernel g, confinement potential V, initial field h0
// and initial law mu0, together with the theoretical constants derived from them.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kspoc {

inline constexpr int kMaxDim = 3;

struct ModelParams {
  double alpha = 1.0;  // chemical decay rate
  double beta = 1.0;   // chemical production rate
  double chi = 1.0;    // chemotactic sensitivity
  double gamma = 1.0;  // field time scale; only gamma == 1 is supported
  int dim = 1;

  // Throws ConfigError when any invariant fails.
  void validate() const;
};

// Sup-norms of a C^2_b function: ||f||, sup |grad f| and the entrywise Hessian sup
// sup_{i,j} sup_x |d_i d_j f|.
struct SupNorms {
  double value = 0.0;
  double gradient = 0.0;
  double hessian = 0.0;
};

// Density of N(0, variance * I_dim) at a point with squared norm r2.
double gaussian_density(double r2, double variance, int dim);

struct CustomKernel {
  std::function<double(std::span<const double>)> value;
  std::function<void(std::span<const double>, std::span<double>)> gradient;
  std::function<double(std::span<const double>, int, int)> hessian;
  std::optional<SupNorms> declared_norms;
};

class Kernel {
 public:
  enum class Kind { gaussian, custom };

  static Kernel gaussian(double delta, int dim);
  static Kernel custom(int dim, CustomKernel spec);

  Kind kind() const { return kind_; }
  bool is_gaussian() const { return kind_ == Kind::gaussian; }
  int dim() const { return dim_; }
  // Variance of the gaussian kind; throws UnsupportedError for custom kernels.
  double delta() const;

  double value(std::span<const double> x) const;
  void gradient(std::span<const double> x, std::span<double> out) const;
  double hessian(std::span<const double> x, int i, int j) const;

  // Closed form for gaussian; declared norms for custom (ConfigError when missing).
  SupNorms sup_norms() const;

 private:
  Kind kind_ = Kind::gaussian;
  int dim_ = 1;
  double delta_ = 1.0;
  CustomKernel custom_;
};

struct CustomPotential {
  std::function<double(std::span<const double>)> value;
  std::function<void(std::span<const double>, std::span<double>)> gradient;
  double lipschitz_grad = 0.0;
  // Half-width of the box in which v* is estimated by sampling.
  double sample_box = 5.0;
};

class Potential {
 public:
  enum class Kind { quadratic, custom };

  // V(x) = <x, A x>/2 with A symmetric positive semidefinite, row-major dim x dim.
  static Potential quadratic(std::vector<double> matrix, int dim);
  static Potential isotropic(double a, int dim);
  static Potential custom(int dim, CustomPotential spec);

  Kind kind() const { return kind_; }
  int dim() const { return dim_; }
  const std::vector<double>& matrix() const { return matrix_; }
  const CustomPotential& custom_spec() const { return custom_; }

  double value(std::span<const double> x) const;
  void gradient(std::span<const double> x, std::span<double> out) const;
  double lipschitz_grad() const;

 private:
  Kind kind_ = Kind::quadratic;
  int dim_ = 1;
  std::vector<double> matrix_;
  CustomPotential custom_;
  double lipschitz_ = 0.0;
};

struct CustomField {
  std::function<double(std::span<const double>)> value;
  std::function<void(std::span<const double>, std::span<double>)> gradient;
  SupNorms norms;
};

// Initial chemical field h0.
class InitialField {
 public:
  enum class Kind { zero, gaussian_bump, custom };

  static InitialField zero(int dim);
  // amplitude * exp(-|x|^2 / (2 variance))
  static InitialField gaussian_bump(double amplitude, double variance, int dim);
  static InitialField custom(int dim, CustomField spec);

  Kind kind() const { return kind_; }
  int dim() const { return dim_; }
  double amplitude() const { return amplitude_; }
  double variance() const { return variance_; }

  double value(std::span<const double> x) const;
  void gradient(std::span<const double> x, std::span<double> out) const;
  SupNorms sup_norms() const;

  // (Q_t h0)(x) and its gradient: closed form for zero / gaussian_bump,
  // tensor Gauss-Hermite quadrature for custom fields.
  double semigroup_value(double t, double alpha, std::span<const double> x) const;
  void semigroup_gradient(double t, double alpha, std::span<const double> x, std::span<double> out) const;

 private:
  Kind kind_ = Kind::zero;
  int dim_ = 1;
  double amplitude_ = 0.0;
  double variance_ = 1.0;
  CustomField custom_;
};

// Initial law mu0. Draws are i.i.d. per particle, keyed by (seed, particle) on a counter-based stream.
class InitialDistribution {
 public:
  enum class Kind { point_mass, gaussian, uniform };

  static InitialDistribution point_mass(std::vector<double> x0);
  // Isotropic gaussian with the given mean and per-coordinate variance.
  static InitialDistribution gaussian(std::vector<double> mean, double variance);
  // Uniform on [lo, hi]^dim.
  static InitialDistribution uniform(double lo, double hi, int dim);

  Kind kind() const { return kind_; }
  int dim() const { return static_cast<int>(location_.size()); }
  const std::vector<double>& location() const { return location_; }
  double spread() const { return spread_; }
  double upper() const { return upper_; }

  void sample(std::uint64_t seed, std::uint64_t particle, std::span<double> out) const;
  // E|X_0|^2
  double second_moment() const;

 private:
  Kind kind_ = Kind::point_mass;
  std::vector<double> location_;
  double spread_ = 0.0;
  double upper_ = 0.0;
};

struct ModelInstance {
  ModelParams params;
  Kernel kernel = Kernel::gaussian(1.0, 1);
  Potential potential = Potential::isotropic(1.0, 1);
  InitialField h0 = InitialField::zero(1);
  InitialDistribution mu0 = InitialDistribution::gaussian({0.0}, 1.0);

  // Validates parameters and that every descriptor agrees on the dimension.
  void validate() const;
};

// Default desk-scale instance: d=1, alpha=beta=chi=1, gaussian g (delta=1), h0=0, V=x^2/2, mu0=N(0,1).
ModelInstance default_instance();

SupNorms kernel_sup_norms(const Kernel& kernel);

struct ConvexityModulus {
  double value = 0.0;
  bool exact = false;         // true for quadratic potentials
  std::size_t samples = 0;    // number of sampled pairs for the estimate
};

// inf_{x != y} <x - y, grad V(x) - grad V(y)> / |x - y|^2
ConvexityModulus convexity_modulus(const Potential& potential, std::uint64_t seed = 0x5eedULL,
                                   std::size_t pairs = 100000);

struct AssumptionReport {
  double v_star = 0.0;
  double lambda_threshold = 0.0;
  bool satisfied = false;
  double margin = 0.0;
};

AssumptionReport check_assumption_A(const ModelInstance& model);

struct TheoreticalConstants {
  double v_star = 0.0;
  bool v_star_exact = true;
  double lambda_threshold = 0.0;
  double C1 = 0.0;
  double C2 = 0.0;
  double C3 = 0.0;
  double lambda_tilde = 0.0;
  double C2_tilde = 0.0;
  double C3_tilde = 0.0;
  double r1 = 0.0;
  double r2 = 0.0;
  // Uniform-in-time POC constant: sup_t sqrt(E|X^{i,N}_t - Xbar^i_t|^2) <= poc_bound_const / sqrt(N).
  // Empty when lambda_tilde <= r1.
  std::optional<double> poc_bound_const;
};

TheoreticalConstants compute_constants(const ModelInstance& model);

// Roots (larger, smaller) of r^2 - b r - c with c >= 0, computed without cancellation.
std::pair<double, double> characteristic_roots(double b, double c);

// e^{-alpha t} ||grad h0|| + beta ||grad g|| / alpha. Throws DomainError for t < 0.
double field_gradient_bound(const ModelInstance& model, double t);

// d (e^{-alpha t} ||Hess h0|| + beta ||Hess g|| / alpha): Lipschitz constant of grad h(t, .).
double field_lipschitz_bound(const ModelInstance& model, double t);

// Level (2/v*)(kappa^2/(2 v*) + 2) bounding sup_n E|Y_n|^2 for the Euler scheme, with
// kappa = 2 chi (beta ||grad g|| / alpha + ||grad h0||), raised to E|Y_0|^2 if larger.
// Empty when v* <= 0.
std::optional<double> second_moment_level(const ModelInstance& model);

// Default stability step threshold eps0 = min(0.1, 1/(2 v*)); empty when v* <= 0.
std::optional<double> default_eps0(const ModelInstance& model);

}  // namespace kspoc

#endif  // KSPOC_MODEL_HPP
