#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "kspoc/errors.hpp"
#include "kspoc/model.hpp"

using namespace kspoc;

namespace {

// Sup over a fine 1-D grid; the kernel peaks well inside [-8, 8].
SupNorms grid_max_norms(const Kernel& g) {
  SupNorms s;
  for (int j = -80000; j <= 80000; ++j) {
    const double x[1] = {j * 1e-4};
    double grad[1];
    g.gradient(x, grad);
    s.value = std::max(s.value, std::abs(g.value(x)));
    s.gradient = std::max(s.gradient, std::abs(grad[0]));
    s.hessian = std::max(s.hessian, std::abs(g.hessian(x, 0, 0)));
  }
  return s;
}

// Bisection for a root of r^2 - b r - c on [lo, hi].
double bisect_root(double b, double c, double lo, double hi) {
  auto f = [&](double r) { return r * r - b * r - c; };
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    if ((f(lo) < 0.0) == (f(mid) < 0.0)) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

ModelInstance with_a(double a) {
  ModelInstance m = default_instance();
  m.potential = Potential::isotropic(a, 1);
  return m;
}

}  // namespace

TEST(Constants, DefaultInstanceMatchesFrozenValues) {
  const TheoreticalConstants c = compute_constants(default_instance());
  EXPECT_NEAR(c.lambda_threshold, 0.7978846, 1e-6 * 0.7978846);
  EXPECT_NEAR(c.lambda_tilde, 0.6010577, 1e-6 * 0.6010577);
  EXPECT_NEAR(c.r1, 0.4628968, 1e-6 * 0.4628968);
  EXPECT_NEAR(c.r2, -0.8618391, 1e-6 * 0.8618391);
  ASSERT_TRUE(c.poc_bound_const.has_value());
  EXPECT_NEAR(*c.poc_bound_const, 3.01, 0.005);
}

TEST(Constants, AgreeWithIndependentRootFinder) {
  for (double a : {0.9, 1.0, 1.5, 3.0}) {
    for (double beta : {0.25, 1.0}) {
      ModelInstance m = with_a(a);
      m.params.beta = beta;
      const TheoreticalConstants c = compute_constants(m);
      const SupNorms g = grid_max_norms(m.kernel);
      const double lt = a - g.hessian * beta;
      const double b = lt - 1.0, cc = g.hessian * beta;
      const double r1 = bisect_root(b, cc, 0.0, 10.0);
      const double r2 = bisect_root(b, cc, -10.0, 0.0);
      EXPECT_NEAR(c.lambda_tilde, lt, 1e-6 * std::abs(lt));
      EXPECT_NEAR(c.r1, r1, 1e-6 * std::abs(r1));
      EXPECT_NEAR(c.r2, r2, 1e-6 * std::abs(r2));
      if (lt > r1) {
        ASSERT_TRUE(c.poc_bound_const.has_value());
        const double k = 2.0 * g.gradient * beta / (r1 - r2) * (1.0 + 1.0 / (lt - r1));
        EXPECT_NEAR(*c.poc_bound_const, k, 1e-6 * k);
      }
    }
  }
}

TEST(Constants, RootsSatisfyCharacteristicPolynomial) {
  for (double b : {-3.0, -0.4, 0.0, 0.5, 2.0, 1e6}) {
    for (double c : {0.0, 1e-12, 0.3, 5.0}) {
      const auto [r1, r2] = characteristic_roots(b, c);
      EXPECT_GE(r1, r2);
      EXPECT_NEAR(r1 + r2, b, 1e-12 * std::max(1.0, std::abs(b)));
      if (c > 0.0) {
        EXPECT_NEAR(r1 * r2, -c, 1e-9 * c + 1e-15);
      }
    }
  }
  const auto [r1, r2] = characteristic_roots(-1.0, 0.0);
  EXPECT_EQ(r1, 0.0);
  EXPECT_EQ(r2, -1.0);
}

TEST(Kernel, GaussianNormsMatchGridMaxima) {
  for (double delta : {0.25, 1.0, 4.0}) {
    const Kernel g = Kernel::gaussian(delta, 1);
    const SupNorms exact = kernel_sup_norms(g);
    const SupNorms grid = grid_max_norms(g);
    EXPECT_NEAR(exact.value, grid.value, 1e-9);
    EXPECT_NEAR(exact.gradient, grid.gradient, 1e-7);
    EXPECT_NEAR(exact.hessian, grid.hessian, 1e-9);
  }
  EXPECT_NEAR(kernel_sup_norms(Kernel::gaussian(1.0, 1)).value, 1.0 / std::sqrt(2.0 * std::numbers::pi), 1e-15);
}

TEST(Kernel, GradientMatchesFiniteDifference) {
  const Kernel g = Kernel::gaussian(0.7, 2);
  const double x[2] = {0.3, -0.8};
  double grad[2];
  g.gradient(x, grad);
  for (int c = 0; c < 2; ++c) {
    double xp[2] = {x[0], x[1]}, xm[2] = {x[0], x[1]};
    xp[c] += 1e-6;
    xm[c] -= 1e-6;
    EXPECT_NEAR(grad[c], (g.value(xp) - g.value(xm)) / 2e-6, 1e-8);
  }
}

TEST(Assumption, DefaultInstanceHasPositiveMargin) {
  const AssumptionReport r = check_assumption_A(default_instance());
  EXPECT_TRUE(r.satisfied);
  EXPECT_NEAR(r.v_star, 1.0, 1e-15);
  EXPECT_NEAR(r.margin, 1.0 - 0.7978845608, 1e-9);
}

TEST(Assumption, WeakConfinementFails) {
  const AssumptionReport r = check_assumption_A(with_a(0.5));
  EXPECT_FALSE(r.satisfied);
  EXPECT_LT(r.margin, 0.0);
}

TEST(Assumption, ChiZeroHasZeroThreshold) {
  ModelInstance m = default_instance();
  m.params.chi = 0.0;
  const AssumptionReport r = check_assumption_A(m);
  EXPECT_EQ(r.lambda_threshold, 0.0);
  EXPECT_TRUE(r.satisfied);
}

TEST(Potential, ConvexityOfQuadraticIsSmallestEigenvalue) {
  const Potential v = Potential::quadratic({2.0, 1.0, 1.0, 2.0}, 2);
  const ConvexityModulus m = convexity_modulus(v);
  EXPECT_TRUE(m.exact);
  EXPECT_NEAR(m.value, 1.0, 1e-12);
  EXPECT_NEAR(v.lipschitz_grad(), 3.0, 1e-12);
}

TEST(Potential, SampledConvexityForCustomPotential) {
  // V = x^2/2 + x^4/4: modulus 1 attained near the origin.
  CustomPotential spec;
  spec.value = [](std::span<const double> x) { return 0.5 * x[0] * x[0] + 0.25 * std::pow(x[0], 4); };
  spec.gradient = [](std::span<const double> x, std::span<double> g) { g[0] = x[0] + std::pow(x[0], 3); };
  spec.lipschitz_grad = 100.0;
  spec.sample_box = 2.0;
  const ConvexityModulus m = convexity_modulus(Potential::custom(1, spec), 7, 20000);
  EXPECT_FALSE(m.exact);
  EXPECT_GE(m.value, 1.0 - 1e-9);
  EXPECT_LT(m.value, 1.05);
}

TEST(Potential, RejectsAsymmetricOrIndefiniteMatrices) {
  EXPECT_THROW(Potential::quadratic({1.0, 0.5, 0.0, 1.0}, 2), ConfigError);
  EXPECT_THROW(Potential::quadratic({1.0, 0.0, 0.0, -1.0}, 2), ConfigError);
  EXPECT_THROW(Potential::quadratic({1.0, 0.0, 0.0}, 2), ConfigError);
}

TEST(Params, Validation) {
  ModelParams p;
  EXPECT_NO_THROW(p.validate());
  p.alpha = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = ModelParams{};
  p.beta = -1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = ModelParams{};
  p.gamma = 2.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = ModelParams{};
  p.dim = 4;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Params, DimensionMismatchIsRejected) {
  ModelInstance m = default_instance();
  m.kernel = Kernel::gaussian(1.0, 2);
  EXPECT_THROW(m.validate(), ConfigError);
}

TEST(FieldBounds, DefaultInstanceGradientBound) {
  EXPECT_NEAR(field_gradient_bound(default_instance(), 10.0), 0.2419707, 1e-7);
  EXPECT_THROW(field_gradient_bound(default_instance(), -1.0), DomainError);
}

TEST(FieldBounds, BumpInitialFieldAddsDecayingTerm) {
  ModelInstance m = default_instance();
  m.h0 = InitialField::gaussian_bump(1.0, 1.0, 1);
  // sup |d/dx exp(-x^2/2)| = exp(-1/2) at x = 1
  EXPECT_NEAR(m.h0.sup_norms().gradient, std::exp(-0.5), 1e-12);
  EXPECT_NEAR(field_gradient_bound(m, 0.0), std::exp(-0.5) + 0.24197072451914337, 1e-12);
  EXPECT_NEAR(field_gradient_bound(m, 2.0), std::exp(-2.0) * std::exp(-0.5) + 0.24197072451914337, 1e-12);
}

TEST(InitialField, BumpSemigroupMatchesQuadrature) {
  // (Q_t h0)(x) = e^{-alpha t} E h0(x + sqrt(t) Z), checked by trapezoidal quadrature.
  const InitialField h0 = InitialField::gaussian_bump(1.5, 0.7, 1);
  for (double t : {0.1, 1.0, 3.0}) {
    for (double x : {-1.0, 0.0, 0.4, 2.5}) {
      double sum = 0.0, dsum = 0.0;
      const double h = 1e-3;
      for (int k = -12000; k <= 12000; ++k) {
        const double z = k * h;
        const double w = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi) * h;
        const double y[1] = {x + std::sqrt(t) * z};
        double g[1];
        h0.gradient(y, g);
        sum += w * h0.value(y);
        dsum += w * g[0];
      }
      const double xs[1] = {x};
      double grad[1];
      h0.semigroup_gradient(t, 0.8, xs, grad);
      EXPECT_NEAR(h0.semigroup_value(t, 0.8, xs), std::exp(-0.8 * t) * sum, 1e-10);
      EXPECT_NEAR(grad[0], std::exp(-0.8 * t) * dsum, 1e-10);
    }
  }
}

TEST(InitialField, CustomFieldUsesGaussHermite) {
  CustomField f;
  f.value = [](std::span<const double> x) { return std::exp(-0.5 * x[0] * x[0]); };
  f.gradient = [](std::span<const double> x, std::span<double> g) { g[0] = -x[0] * std::exp(-0.5 * x[0] * x[0]); };
  f.norms = {1.0, std::exp(-0.5), 1.0};
  const InitialField custom = InitialField::custom(1, f);
  const InitialField bump = InitialField::gaussian_bump(1.0, 1.0, 1);
  for (double x : {-2.0, 0.0, 1.3}) {
    const double xs[1] = {x};
    EXPECT_NEAR(custom.semigroup_value(0.5, 1.0, xs), bump.semigroup_value(0.5, 1.0, xs), 1e-10);
  }
}

TEST(SecondMoment, LevelAndStepThreshold) {
  const ModelInstance m = default_instance();
  const double kappa = 2.0 * 0.24197072451914337;
  ASSERT_TRUE(second_moment_level(m).has_value());
  EXPECT_NEAR(*second_moment_level(m), 2.0 * (kappa * kappa / 2.0 + 2.0), 1e-12);
  EXPECT_NEAR(*default_eps0(m), 0.1, 1e-15);
  ModelInstance flat = default_instance();
  flat.potential = Potential::isotropic(0.0, 1);
  EXPECT_FALSE(second_moment_level(flat).has_value());
}

TEST(InitialDistribution, GaussianSecondMoment) {
  const auto mu = InitialDistribution::gaussian({1.0, -2.0}, 0.5);
  EXPECT_NEAR(mu.second_moment(), 1.0 + 4.0 + 2 * 0.5, 1e-12);
  double sum = 0.0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    double x[2];
    mu.sample(11, i, x);
    sum += x[0] * x[0] + x[1] * x[1];
  }
  EXPECT_NEAR(sum / n, 6.0, 0.1);
}

TEST(InitialDistribution, UniformStaysInBox) {
  const auto mu = InitialDistribution::uniform(-1.0, 2.0, 3);
  for (int i = 0; i < 1000; ++i) {
    double x[3];
    mu.sample(3, i, x);
    for (double v : x) {
      EXPECT_GT(v, -1.0);
      EXPECT_LT(v, 2.0);
    }
  }
}
