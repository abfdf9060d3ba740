#include "kspoc/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "kspoc/errors.hpp"
#include "kspoc/rng.hpp"

namespace kspoc {

namespace {

double squared_norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

void require_dim(std::span<const double> x, int dim, const char* what) {
  if (static_cast<int>(x.size()) != dim) {
    throw DomainError(std::string(what) + ": point has dimension " + std::to_string(x.size()) + ", expected " +
                      std::to_string(dim));
  }
}

// Gauss-Hermite rule for weight exp(-z^2) via Golub-Welsch.
struct HermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

const HermiteRule& hermite_rule() {
  static const HermiteRule rule = [] {
    constexpr int n = 48;
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
      jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(k / 2.0);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
    HermiteRule r;
    for (int k = 0; k < n; ++k) {
      r.nodes.push_back(solver.eigenvalues()(k));
      const double v0 = solver.eigenvectors()(0, k);
      r.weights.push_back(std::sqrt(std::numbers::pi) * v0 * v0);
    }
    return r;
  }();
  return rule;
}

// E[f(x + B_t)] for a tensor-product Gauss-Hermite rule; `f` accumulates into `acc` with a weight.
template <class Accumulate>
void heat_expectation(std::span<const double> x, double t, Accumulate&& accumulate) {
  const HermiteRule& rule = hermite_rule();
  const int dim = static_cast<int>(x.size());
  const std::size_t n = rule.nodes.size();
  const double scale = std::sqrt(2.0 * t);
  const double norm = std::pow(std::numbers::pi, -0.5 * dim);
  std::vector<double> y(x.begin(), x.end());
  std::size_t total = 1;
  for (int d = 0; d < dim; ++d) total *= n;
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    double w = norm;
    for (int d = 0; d < dim; ++d) {
      const std::size_t k = rem % n;
      rem /= n;
      y[d] = x[d] + scale * rule.nodes[k];
      w *= rule.weights[k];
    }
    accumulate(std::span<const double>(y), w);
  }
}

}  // namespace

void ModelParams::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be finite and > 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be finite and >= 0");
  if (!(chi >= 0.0) || !std::isfinite(chi)) throw ConfigError("chi must be finite and >= 0");
  if (gamma != 1.0) {
    throw ConfigError("gamma must equal 1: all theoretical constants are derived for the normalized field time scale");
  }
  if (dim < 1 || dim > kMaxDim) throw ConfigError("dim must be in [1, 3]");
}

double gaussian_density(double r2, double variance, int dim) {
  return std::pow(2.0 * std::numbers::pi * variance, -0.5 * dim) * std::exp(-0.5 * r2 / variance);
}

// ---------------------------------------------------------------- Kernel

Kernel Kernel::gaussian(double delta, int dim) {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw ConfigError("gaussian kernel variance delta must be > 0");
  if (dim < 1 || dim > kMaxDim) throw ConfigError("kernel dimension must be in [1, 3]");
  Kernel k;
  k.kind_ = Kind::gaussian;
  k.dim_ = dim;
  k.delta_ = delta;
  return k;
}

Kernel Kernel::custom(int dim, CustomKernel spec) {
  if (!spec.value || !spec.gradient || !spec.hessian) {
    throw ConfigError("custom kernel requires value, gradient and Hessian evaluators");
  }
  if (dim < 1 || dim > kMaxDim) throw ConfigError("kernel dimension must be in [1, 3]");
  Kernel k;
  k.kind_ = Kind::custom;
  k.dim_ = dim;
  k.custom_ = std::move(spec);
  return k;
}

double Kernel::delta() const {
  if (kind_ != Kind::gaussian) throw UnsupportedError("kernel variance is only defined for the gaussian kind");
  return delta_;
}

double Kernel::value(std::span<const double> x) const {
  require_dim(x, dim_, "kernel value");
  if (kind_ == Kind::custom) return custom_.value(x);
  return gaussian_density(squared_norm(x), delta_, dim_);
}

void Kernel::gradient(std::span<const double> x, std::span<double> out) const {
  require_dim(x, dim_, "kernel gradient");
  if (kind_ == Kind::custom) {
    custom_.gradient(x, out);
    return;
  }
  const double g = gaussian_density(squared_norm(x), delta_, dim_);
  for (int i = 0; i < dim_; ++i) out[i] = -g * x[i] / delta_;
}

double Kernel::hessian(std::span<const double> x, int i, int j) const {
  require_dim(x, dim_, "kernel Hessian");
  if (kind_ == Kind::custom) return custom_.hessian(x, i, j);
  const double g = gaussian_density(squared_norm(x), delta_, dim_);
  const double diag = (i == j) ? 1.0 / delta_ : 0.0;
  return g * (x[i] * x[j] / (delta_ * delta_) - diag);
}

SupNorms Kernel::sup_norms() const {
  if (kind_ == Kind::custom) {
    if (!custom_.declared_norms) throw ConfigError("custom kernel must declare its sup-norms");
    return *custom_.declared_norms;
  }
  // |g| peaks at 0; |grad g| = g |x| / delta peaks on |x| = sqrt(delta); the entrywise Hessian sup is the
  // diagonal entry at 0 (the other critical values are e^{-3/2} 2 g(0)/delta and e^{-1} g(0)/delta).
  const double peak = std::pow(2.0 * std::numbers::pi * delta_, -0.5 * dim_);
  return {peak, peak * std::exp(-0.5) / std::sqrt(delta_), peak / delta_};
}

SupNorms kernel_sup_norms(const Kernel& kernel) { return kernel.sup_norms(); }

// ---------------------------------------------------------------- Potential

Potential Potential::quadratic(std::vector<double> matrix, int dim) {
  if (dim < 1 || dim > kMaxDim) throw ConfigError("potential dimension must be in [1, 3]");
  if (matrix.size() != static_cast<std::size_t>(dim * dim)) {
    throw ConfigError("quadratic potential matrix must have dim x dim entries");
  }
  Eigen::MatrixXd a(dim, dim);
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) {
      a(i, j) = matrix[i * dim + j];
      if (!std::isfinite(a(i, j))) throw ConfigError("quadratic potential matrix has non-finite entries");
    }
  }
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + a.cwiseAbs().maxCoeff())) {
    throw ConfigError("quadratic potential matrix must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a, Eigen::EigenvaluesOnly);
  if (solver.eigenvalues().minCoeff() < -1e-12) {
    throw ConfigError("quadratic potential matrix must be positive semidefinite");
  }
  Potential p;
  p.kind_ = Kind::quadratic;
  p.dim_ = dim;
  p.matrix_ = std::move(matrix);
  p.lipschitz_ = solver.eigenvalues().maxCoeff();
  return p;
}

Potential Potential::isotropic(double a, int dim) {
  std::vector<double> m(static_cast<std::size_t>(dim * dim), 0.0);
  for (int i = 0; i < dim; ++i) m[i * dim + i] = a;
  return quadratic(std::move(m), dim);
}

Potential Potential::custom(int dim, CustomPotential spec) {
  if (!spec.value || !spec.gradient) throw ConfigError("custom potential requires value and gradient evaluators");
  if (dim < 1 || dim > kMaxDim) throw ConfigError("potential dimension must be in [1, 3]");
  if (!(spec.lipschitz_grad > 0.0)) throw ConfigError("custom potential must declare lipschitz_grad > 0");
  std::vector<double> zero(dim, 0.0), grad(dim, 0.0);
  spec.gradient(zero, grad);
  if (std::abs(spec.value(zero)) > 1e-12 || std::sqrt(squared_norm(grad)) > 1e-12) {
    throw ConfigError("custom potential must satisfy V(0) = 0 and grad V(0) = 0");
  }
  Potential p;
  p.kind_ = Kind::custom;
  p.dim_ = dim;
  p.lipschitz_ = spec.lipschitz_grad;
  p.custom_ = std::move(spec);
  return p;
}

double Potential::value(std::span<const double> x) const {
  if (kind_ == Kind::custom) return custom_.value(x);
  double v = 0.0;
  for (int i = 0; i < dim_; ++i) {
    for (int j = 0; j < dim_; ++j) v += x[i] * matrix_[i * dim_ + j] * x[j];
  }
  return 0.5 * v;
}

void Potential::gradient(std::span<const double> x, std::span<double> out) const {
  if (kind_ == Kind::custom) {
    custom_.gradient(x, out);
    return;
  }
  for (int i = 0; i < dim_; ++i) {
    double s = 0.0;
    for (int j = 0; j < dim_; ++j) s += matrix_[i * dim_ + j] * x[j];
    out[i] = s;
  }
}

double Potential::lipschitz_grad() const { return lipschitz_; }

ConvexityModulus convexity_modulus(const Potential& potential, std::uint64_t seed, std::size_t pairs) {
  const int dim = potential.dim();
  if (potential.kind() == Potential::Kind::quadratic) {
    Eigen::MatrixXd a(dim, dim);
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < dim; ++j) a(i, j) = potential.matrix()[i * dim + j];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a, Eigen::EigenvaluesOnly);
    return {solver.eigenvalues().minCoeff(), true, 0};
  }
  const double box = potential.custom_spec().sample_box;
  CounterStream stream(seed, 0x76737461ULL);
  std::vector<double> x(dim), y(dim), gx(dim), gy(dim);
  double best = std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  for (std::size_t s = 0; s < pairs; ++s) {
    for (int i = 0; i < dim; ++i) {
      x[i] = box * (2.0 * stream.uniform() - 1.0);
      y[i] = box * (2.0 * stream.uniform() - 1.0);
    }
    double dist2 = 0.0;
    for (int i = 0; i < dim; ++i) dist2 += (x[i] - y[i]) * (x[i] - y[i]);
    if (dist2 < 1e-20) continue;
    potential.gradient(x, gx);
    potential.gradient(y, gy);
    double inner = 0.0;
    for (int i = 0; i < dim; ++i) inner += (x[i] - y[i]) * (gx[i] - gy[i]);
    best = std::min(best, inner / dist2);
    ++used;
  }
  return {best, false, used};
}

// ---------------------------------------------------------------- InitialField

InitialField InitialField::zero(int dim) {
  if (dim < 1 || dim > kMaxDim) throw ConfigError("h0 dimension must be in [1, 3]");
  InitialField f;
  f.kind_ = Kind::zero;
  f.dim_ = dim;
  return f;
}

InitialField InitialField::gaussian_bump(double amplitude, double variance, int dim) {
  if (dim < 1 || dim > kMaxDim) throw ConfigError("h0 dimension must be in [1, 3]");
  if (!(variance > 0.0) || !std::isfinite(variance)) throw ConfigError("h0 bump variance must be > 0");
  if (!std::isfinite(amplitude)) throw ConfigError("h0 bump amplitude must be finite");
  InitialField f;
  f.kind_ = Kind::gaussian_bump;
  f.dim_ = dim;
  f.amplitude_ = amplitude;
  f.variance_ = variance;
  return f;
}

InitialField InitialField::custom(int dim, CustomField spec) {
  if (!spec.value || !spec.gradient) throw ConfigError("custom h0 requires value and gradient evaluators");
  if (dim < 1 || dim > kMaxDim) throw ConfigError("h0 dimension must be in [1, 3]");
  InitialField f;
  f.kind_ = Kind::custom;
  f.dim_ = dim;
  f.custom_ = std::move(spec);
  return f;
}

double InitialField::value(std::span<const double> x) const {
  switch (kind_) {
    case Kind::zero:
      return 0.0;
    case Kind::gaussian_bump:
      return amplitude_ * std::exp(-0.5 * squared_norm(x) / variance_);
    case Kind::custom:
      return custom_.value(x);
  }
  return 0.0;
}

void InitialField::gradient(std::span<const double> x, std::span<double> out) const {
  switch (kind_) {
    case Kind::zero:
      std::fill(out.begin(), out.end(), 0.0);
      return;
    case Kind::gaussian_bump: {
      const double v = amplitude_ * std::exp(-0.5 * squared_norm(x) / variance_);
      for (int i = 0; i < dim_; ++i) out[i] = -v * x[i] / variance_;
      return;
    }
    case Kind::custom:
      custom_.gradient(x, out);
      return;
  }
}

SupNorms InitialField::sup_norms() const {
  switch (kind_) {
    case Kind::zero:
      return {};
    case Kind::gaussian_bump: {
      const double a = std::abs(amplitude_);
      return {a, a * std::exp(-0.5) / std::sqrt(variance_), a / variance_};
    }
    case Kind::custom:
      return custom_.norms;
  }
  return {};
}

double InitialField::semigroup_value(double t, double alpha, std::span<const double> x) const {
  if (t < 0.0) throw DomainError("semigroup time must be >= 0");
  const double decay = std::exp(-alpha * t);
  switch (kind_) {
    case Kind::zero:
      return 0.0;
    case Kind::gaussian_bump: {
      const double s2 = variance_ + t;
      return decay * amplitude_ * std::pow(variance_ / s2, 0.5 * dim_) * std::exp(-0.5 * squared_norm(x) / s2);
    }
    case Kind::custom: {
      if (t == 0.0) return custom_.value(x);
      double acc = 0.0;
      heat_expectation(x, t, [&](std::span<const double> y, double w) { acc += w * custom_.value(y); });
      return decay * acc;
    }
  }
  return 0.0;
}

void InitialField::semigroup_gradient(double t, double alpha, std::span<const double> x,
                                      std::span<double> out) const {
  if (t < 0.0) throw DomainError("semigroup time must be >= 0");
  const double decay = std::exp(-alpha * t);
  switch (kind_) {
    case Kind::zero:
      std::fill(out.begin(), out.end(), 0.0);
      return;
    case Kind::gaussian_bump: {
      const double s2 = variance_ + t;
      const double v =
          decay * amplitude_ * std::pow(variance_ / s2, 0.5 * dim_) * std::exp(-0.5 * squared_norm(x) / s2);
      for (int i = 0; i < dim_; ++i) out[i] = -v * x[i] / s2;
      return;
    }
    case Kind::custom: {
      if (t == 0.0) {
        custom_.gradient(x, out);
        return;
      }
      std::vector<double> acc(dim_, 0.0), g(dim_);
      heat_expectation(x, t, [&](std::span<const double> y, double w) {
        custom_.gradient(y, g);
        for (int i = 0; i < dim_; ++i) acc[i] += w * g[i];
      });
      for (int i = 0; i < dim_; ++i) out[i] = decay * acc[i];
      return;
    }
  }
}

// ---------------------------------------------------------------- InitialDistribution

InitialDistribution InitialDistribution::point_mass(std::vector<double> x0) {
  if (x0.empty() || x0.size() > kMaxDim) throw ConfigError("point mass location must have 1..3 coordinates");
  InitialDistribution d;
  d.kind_ = Kind::point_mass;
  d.location_ = std::move(x0);
  return d;
}

InitialDistribution InitialDistribution::gaussian(std::vector<double> mean, double variance) {
  if (mean.empty() || mean.size() > kMaxDim) throw ConfigError("gaussian mu0 mean must have 1..3 coordinates");
  if (!(variance >= 0.0) || !std::isfinite(variance)) throw ConfigError("gaussian mu0 variance must be >= 0");
  InitialDistribution d;
  d.kind_ = Kind::gaussian;
  d.location_ = std::move(mean);
  d.spread_ = variance;
  return d;
}

InitialDistribution InitialDistribution::uniform(double lo, double hi, int dim) {
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) throw ConfigError("uniform mu0 needs lo < hi");
  if (dim < 1 || dim > kMaxDim) throw ConfigError("uniform mu0 dimension must be in [1, 3]");
  InitialDistribution d;
  d.kind_ = Kind::uniform;
  d.location_.assign(dim, lo);
  d.spread_ = lo;
  d.upper_ = hi;
  return d;
}

void InitialDistribution::sample(std::uint64_t seed, std::uint64_t particle, std::span<double> out) const {
  const std::size_t dim = location_.size();
  switch (kind_) {
    case Kind::point_mass:
      std::copy(location_.begin(), location_.end(), out.begin());
      return;
    case Kind::gaussian: {
      standard_normals(seed, StreamDomain::initial, particle, 0, out.first(dim));
      const double sd = std::sqrt(spread_);
      for (std::size_t i = 0; i < dim; ++i) out[i] = location_[i] + sd * out[i];
      return;
    }
    case Kind::uniform: {
      uniforms(seed, StreamDomain::initial, particle, 0, out.first(dim));
      for (std::size_t i = 0; i < dim; ++i) out[i] = spread_ + (upper_ - spread_) * out[i];
      return;
    }
  }
}

double InitialDistribution::second_moment() const {
  const double dim = static_cast<double>(location_.size());
  switch (kind_) {
    case Kind::point_mass:
      return squared_norm(location_);
    case Kind::gaussian:
      return squared_norm(location_) + dim * spread_;
    case Kind::uniform: {
      const double lo = spread_, hi = upper_;
      return dim * (hi * hi + hi * lo + lo * lo) / 3.0;
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------- ModelInstance

void ModelInstance::validate() const {
  params.validate();
  const int d = params.dim;
  if (kernel.dim() != d || potential.dim() != d || h0.dim() != d || mu0.dim() != d) {
    throw ConfigError("kernel, potential, h0 and mu0 must all have dimension " + std::to_string(d));
  }
}

ModelInstance default_instance() { return ModelInstance{}; }

// ---------------------------------------------------------------- constants

AssumptionReport check_assumption_A(const ModelInstance& model) {
  const ModelParams& p = model.params;
  const SupNorms g = model.kernel.sup_norms();
  const SupNorms h = model.h0.sup_norms();
  AssumptionReport r;
  r.v_star = convexity_modulus(model.potential).value;
  r.lambda_threshold = (h.hessian + 2.0 * p.beta * g.hessian / p.alpha) * p.chi * p.dim;
  r.margin = r.v_star - r.lambda_threshold;
  r.satisfied = r.margin > 0.0;
  return r;
}

std::pair<double, double> characteristic_roots(double b, double c) {
  if (c == 0.0) return {std::max(b, 0.0), std::min(b, 0.0)};
  const double disc = std::sqrt(b * b + 4.0 * c);
  if (b >= 0.0) {
    const double r1 = 0.5 * (b + disc);
    return {r1, -c / r1};
  }
  const double r2 = 0.5 * (b - disc);
  return {-c / r2, r2};
}

TheoreticalConstants compute_constants(const ModelInstance& model) {
  const ModelParams& p = model.params;
  const SupNorms g = model.kernel.sup_norms();
  const SupNorms h = model.h0.sup_norms();
  const ConvexityModulus vm = convexity_modulus(model.potential);

  TheoreticalConstants c;
  c.v_star = vm.value;
  c.v_star_exact = vm.exact;
  c.lambda_threshold = (h.hessian + 2.0 * p.beta * g.hessian / p.alpha) * p.chi * p.dim;
  c.C1 = p.dim * h.hessian;
  c.C2 = p.dim * g.hessian;
  c.C3 = g.gradient;
  c.lambda_tilde = c.v_star - c.C1 * p.chi - c.C2 * p.chi * p.beta / p.alpha;
  c.C2_tilde = c.C2 * p.chi * p.beta;
  c.C3_tilde = 2.0 * c.C3 * p.chi * p.beta / p.alpha;
  std::tie(c.r1, c.r2) = characteristic_roots(c.lambda_tilde - p.alpha, c.C2_tilde);
  if (c.lambda_tilde > c.r1 && c.r1 > c.r2) {
    c.poc_bound_const = c.C3_tilde / (c.r1 - c.r2) * (1.0 + p.alpha / (c.lambda_tilde - c.r1));
  }
  return c;
}

double field_gradient_bound(const ModelInstance& model, double t) {
  if (t < 0.0) throw DomainError("field_gradient_bound: t must be >= 0");
  const ModelParams& p = model.params;
  return std::exp(-p.alpha * t) * model.h0.sup_norms().gradient + p.beta * model.kernel.sup_norms().gradient / p.alpha;
}

double field_lipschitz_bound(const ModelInstance& model, double t) {
  if (t < 0.0) throw DomainError("field_lipschitz_bound: t must be >= 0");
  const ModelParams& p = model.params;
  return p.dim *
         (std::exp(-p.alpha * t) * model.h0.sup_norms().hessian + p.beta * model.kernel.sup_norms().hessian / p.alpha);
}

std::optional<double> second_moment_level(const ModelInstance& model) {
  const double v = convexity_modulus(model.potential).value;
  if (!(v > 0.0)) return std::nullopt;
  const ModelParams& p = model.params;
  const double kappa =
      2.0 * p.chi * (p.beta * model.kernel.sup_norms().gradient / p.alpha + model.h0.sup_norms().gradient);
  const double level = (2.0 / v) * (kappa * kappa / (2.0 * v) + 2.0);
  return std::max(level, model.mu0.second_moment());
}

std::optional<double> default_eps0(const ModelInstance& model) {
  const double v = convexity_modulus(model.potential).value;
  if (!(v > 0.0)) return std::nullopt;
  return std::min(0.1, 1.0 / (2.0 * v));
}

}  // namespace kspoc
