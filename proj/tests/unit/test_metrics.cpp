#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "kspoc/errors.hpp"
#include "kspoc/metrics.hpp"
#include "kspoc/simulate.hpp"

using namespace kspoc;

namespace {

EmpiricalMeasure cloud(std::vector<double> v, int d = 1) { return EmpiricalMeasure(std::move(v), d); }

std::vector<double> random_points(std::mt19937_64& rng, std::size_t m, int d, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(m * d);
  for (auto& x : v) x = n(rng);
  return v;
}

// min over all permutations of the mean of |x_i - y_sigma(i)|^p, root 1/p
double brute_force(const EmpiricalMeasure& a, const EmpiricalMeasure& b, int p) {
  const std::size_t m = a.size();
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double r2 = 0.0;
      for (int k = 0; k < a.dim(); ++k) r2 += std::pow(a.point(i)[k] - b.point(perm[i])[k], 2);
      s += p == 1 ? std::sqrt(r2) : r2;
    }
    best = std::min(best, s / m);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return p == 1 ? best : std::sqrt(best);
}

}  // namespace

TEST(Quantile, Examples) {
  EXPECT_EQ(w1_1d(cloud({0.3, -1, 2}), cloud({2, 0.3, -1})).value, 0.0);
  EXPECT_DOUBLE_EQ(w1_1d(cloud({0}), cloud({1})).value, 1.0);
  EXPECT_DOUBLE_EQ(w1_1d(cloud({0, 2}), cloud({1, 3})).value, 1.0);
  EXPECT_EQ(w2_1d(cloud({1, 5}), cloud({5, 1})).value, 0.0);
  EXPECT_DOUBLE_EQ(w2_1d(cloud({0, 0}), cloud({-1, 1})).value, 1.0);
  EXPECT_TRUE(w1_1d(cloud({0}), cloud({1})).exact);
}

TEST(Quantile, UnequalSizesPointToAssignment) {
  try {
    w1_1d(cloud({0, 1}), cloud({0}));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("assignment"), std::string::npos);
  }
  EXPECT_THROW(w2_1d(cloud({0, 1}), cloud({0})), ConfigError);
  EXPECT_THROW(w1_1d(cloud({0, 1}, 2), cloud({0, 1}, 2)), ConfigError);
}

TEST(Quantile, Homogeneity) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_points(rng, 30, 1), b = random_points(rng, 30, 1);
    const double s = trial % 2 ? -2.5 : 0.3;
    auto as = a, bs = b;
    for (auto& x : as) x *= s;
    for (auto& x : bs) x *= s;
    EXPECT_NEAR(w2_1d(cloud(as), cloud(bs)).value, std::abs(s) * w2_1d(cloud(a), cloud(b)).value, 1e-12);
  }
}

TEST(Measure, Validation) {
  EXPECT_THROW(cloud({}), ConfigError);
  EXPECT_THROW(cloud({1, 2, 3}, 2), ConfigError);
  EXPECT_THROW(cloud({1, 2, 3, 4}, 4), ConfigError);
  EXPECT_THROW(cloud({1, NAN}), ConfigError);
}

TEST(Assignment, MatchesFactorialBruteForce) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng() % 8;
    const int d = 1 + static_cast<int>(rng() % 2);
    const int p = 1 + static_cast<int>(rng() % 2);
    const auto a = cloud(random_points(rng, m, d), d), b = cloud(random_points(rng, m, d), d);
    EXPECT_NEAR(wp_assignment(a, b, p).value, brute_force(a, b, p), 1e-12) << "m=" << m << " d=" << d;
  }
}

TEST(Assignment, SolverReturnsPermutation) {
  const std::vector<double> cost{4, 1, 3, 2, 0, 5, 3, 2, 2};
  const auto col = solve_assignment(cost, 3);
  double total = 0.0;
  for (std::size_t i = 0; i < 3; ++i) total += cost[i * 3 + col[i]];
  EXPECT_DOUBLE_EQ(total, 5.0);
  auto sorted = col;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Assignment, SquareCornersToThemselves) {
  const auto c = cloud({0, 0, 1, 0, 0, 1, 1, 1}, 2);
  const auto shuffled = cloud({1, 1, 0, 0, 0, 1, 1, 0}, 2);
  EXPECT_EQ(wp_assignment(c, shuffled, 1).value, 0.0);
  EXPECT_EQ(wp_assignment(c, shuffled, 2).value, 0.0);
}

TEST(Assignment, AgreesWithQuantileIn1d) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + rng() % 64;
    const auto a = cloud(random_points(rng, m, 1)), b = cloud(random_points(rng, m, 1, 2.0));
    EXPECT_NEAR(wp_assignment(a, b, 1).value, w1_1d(a, b).value, 1e-12);
    EXPECT_NEAR(wp_assignment(a, b, 2).value, w2_1d(a, b).value, 1e-12);
  }
}

TEST(Assignment, RefusalsAndDomain) {
  std::mt19937_64 rng(1);
  const auto a = cloud(random_points(rng, 10, 1)), b = cloud(random_points(rng, 10, 1));
  try {
    wp_assignment(a, b, 1, 8);
    FAIL();
  } catch (const CapacityError& e) {
    EXPECT_NE(std::string(e.what()).find("sliced"), std::string::npos);
  }
  EXPECT_THROW(wp_assignment(a, b, 3), DomainError);
  EXPECT_THROW(wp_assignment(a, cloud({0.0}), 1), ConfigError);
}

TEST(Metric, Axioms) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng() % 40;
    const auto a = cloud(random_points(rng, m, 1)), b = cloud(random_points(rng, m, 1, 3.0)),
               c = cloud(random_points(rng, m, 1, 0.5));
    EXPECT_NEAR(w1_1d(a, b).value, w1_1d(b, a).value, 1e-12);
    EXPECT_EQ(w1_1d(a, a).value, 0.0);
    EXPECT_LE(w1_1d(a, c).value, w1_1d(a, b).value + w1_1d(b, c).value + 1e-10);
    EXPECT_LE(w2_1d(a, c).value, w2_1d(a, b).value + w2_1d(b, c).value + 1e-10);
    EXPECT_LE(w1_1d(a, b).value, w2_1d(a, b).value + 1e-12);
  }
}

TEST(Metric, TranslationAndDuality) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 5 + rng() % 40;
    auto a = random_points(rng, m, 1);
    auto b = random_points(rng, m, 1, 1.7);
    const double w = w1_1d(cloud(a), cloud(b)).value;
    auto at = a, bt = b;
    for (auto& x : at) x += 3.25;
    for (auto& x : bt) x += 3.25;
    EXPECT_NEAR(w1_1d(cloud(at), cloud(bt)).value, w, 1e-12);
    // 1-Lipschitz test functions lower-bound W1
    for (double shift : {-1.0, 0.0, 0.7}) {
      for (auto f : {+[](double x, double s) { return std::abs(x - s); },
                     +[](double x, double s) { return std::sin(x + s); }, +[](double x, double) { return x; }}) {
        double ea = 0.0, eb = 0.0;
        for (double x : a) ea += f(x, shift);
        for (double x : b) eb += f(x, shift);
        EXPECT_LE(std::abs(ea - eb) / m, w + 1e-12);
      }
    }
  }
}

TEST(Sliced, IdenticalCloudsGiveZero) {
  std::mt19937_64 rng(3);
  const auto a = cloud(random_points(rng, 20, 2), 2);
  const DistanceReport r = sliced_w1(a, a, 64, 9);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.std_error, 0.0);
  EXPECT_FALSE(r.exact);
  EXPECT_EQ(r.n_projections, 64u);
  EXPECT_EQ(r.method, DistanceMethod::sliced);
  EXPECT_THROW(sliced_w1(cloud({0, 1}), cloud({1, 2}), 8, 1), DomainError);
}

TEST(Sliced, TranslationContraction) {
  std::mt19937_64 rng(31);
  const auto pts = random_points(rng, 50, 3);
  auto moved = pts;
  const double v[3] = {0.6, -0.8, 0.0};
  for (std::size_t i = 0; i < 50; ++i)
    for (int k = 0; k < 3; ++k) moved[i * 3 + k] += v[k];
  const DistanceReport r = sliced_w1(cloud(pts, 3), cloud(moved, 3), 400, 2);
  // per direction the projected W1 is |<v, u>|; its spherical mean in 3-d is |v| / 2
  EXPECT_LE(r.value, 1.0 + 3 * r.std_error);
  EXPECT_NEAR(r.value, 0.5, 3 * r.std_error + 1e-9);
}

TEST(Sliced, BoundedByExactAssignment) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 2 + rng() % 62;
    const auto a = cloud(random_points(rng, m, 2), 2), b = cloud(random_points(rng, m, 2, 1.5), 2);
    const DistanceReport s = sliced_w1(a, b, 128, trial);
    EXPECT_LE(s.value, wp_assignment(a, b, 1).value + s.std_error);
  }
}

TEST(Moments, SquareExponential) {
  EXPECT_DOUBLE_EQ(sq_exp_moment(cloud({0, 0, 0}), 0.7).value, 1.0);
  EXPECT_NEAR(sq_exp_moment(cloud({1, -1}), 1.0).value, std::exp(1.0), 1e-14);
  EXPECT_THROW(sq_exp_moment(cloud({1}), 0.0), DomainError);
  EXPECT_THROW(sq_exp_moment(cloud({1}), -1.0), DomainError);

  std::mt19937_64 rng(41);
  const auto g = cloud(random_points(rng, 100000, 1));
  const MomentReport r = sq_exp_moment(g, 0.25);
  EXPECT_NEAR(r.value, std::sqrt(2.0), 3 * r.std_error);
  EXPECT_FALSE(r.overflow);

  const MomentReport big = sq_exp_moment(cloud({100.0}), 1.0);
  EXPECT_TRUE(big.overflow);
  EXPECT_TRUE(std::isfinite(big.value));
}

TEST(Moments, Plain) {
  EXPECT_DOUBLE_EQ(p_moment(cloud({3, 4}, 2), 2.0).value, 25.0);
  EXPECT_DOUBLE_EQ(p_moment(cloud({-1, 3}), 1.0).value, 2.0);
}

namespace {

PathSample sample_paths(const ModelInstance& m, std::size_t n, std::size_t steps, std::size_t reps) {
  PathSample ps;
  for (std::size_t r = 0; r < reps; ++r) {
    EulerConfig c;
    c.epsilon = 0.01;
    c.n_steps = steps;
    c.n_particles = n;
    c.seed = 55;
    c.replication = r;
    c.trajectory_stride = 1;
    const RunRecord rec = run_particle_system(c, m);
    std::vector<std::vector<double>> run;
    if (r == 0) ps.times.clear();
    for (const auto& row : rec.trajectory) {
      if (r == 0) ps.times.push_back(row.t);
      run.push_back(row.positions);
    }
    ps.runs.push_back(std::move(run));
  }
  return ps;
}

}  // namespace

TEST(Increments, BrownianVariance) {
  ModelInstance m = default_instance();
  m.params.chi = 0.0;
  m.potential = Potential::isotropic(0.0, 1);
  const PathSample ps = sample_paths(m, 500, 50, 4);
  EXPECT_EQ(increment_moment(ps, 0.2, 0.2, 2).value, 0.0);
  for (auto [s, t] : {std::pair{0.0, 0.5}, std::pair{0.1, 0.3}, std::pair{0.4, 0.2}}) {
    const Estimate e = increment_moment(ps, s, t, 2);
    EXPECT_EQ(e.samples, 2000u);
    EXPECT_NEAR(e.value, std::abs(t - s), 3 * e.std_error);
  }
  EXPECT_THROW(increment_moment(ps, 0.105, 0.3, 2), DomainError);
  EXPECT_THROW(increment_moment(ps, 0.1, 0.9, 2), DomainError);
}

TEST(Increments, FullModelLinearRegime) {
  const PathSample ps = sample_paths(default_instance(), 1000, 50, 4);
  const Estimate wide = increment_moment(ps, 0.3, 0.5, 2);
  const Estimate narrow = increment_moment(ps, 0.3, 0.4, 2);
  const double ratio = narrow.value / wide.value;
  const double se = ratio * std::hypot(narrow.std_error / narrow.value, wide.std_error / wide.value);
  EXPECT_NEAR(ratio, 0.5, 3 * se + 0.02);
}

TEST(Tails, Examples) {
  std::vector<double> low(40, 0.1);
  const TailEstimate z = tail_probability(low, 0.5);
  EXPECT_EQ(z.estimate, 0.0);
  EXPECT_EQ(z.lower, 0.0);
  // Wilson upper bound for 0 of 40: z^2 / (n + z^2)
  const double zz = 1.959963984540054 * 1.959963984540054;
  EXPECT_NEAR(z.upper, zz / (40 + zz), 1e-12);

  std::vector<double> half(40);
  for (std::size_t i = 0; i < 40; ++i) half[i] = i % 2 ? 1.0 : 0.0;
  const TailEstimate h = tail_probability(half, 0.5);
  EXPECT_DOUBLE_EQ(h.estimate, 0.5);
  EXPECT_EQ(h.exceed, 20u);
  EXPECT_NEAR(h.lower + h.upper, 1.0, 1e-12);
  EXPECT_LT(h.lower, 0.5);
  EXPECT_GT(h.upper, 0.5);
  EXPECT_THROW(tail_probability(std::vector<double>(29, 0.0), 0.1), ConfigError);
}

TEST(Tails, SyntheticExponentialTailIsLinearInNEps2) {
  // W = sqrt(E / (c N)) with E ~ Exp(1) has P(W > eps) = exp(-c N eps^2)
  const double c = 2.0;
  std::mt19937_64 rng(43);
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> x, y;
  for (std::size_t n : {8, 16, 32}) {
    std::vector<double> w(20000);
    for (auto& v : w) v = std::sqrt(expo(rng) / (c * n));
    for (double eps : {0.1, 0.15, 0.2, 0.25}) {
      const TailEstimate t = tail_probability(w, eps);
      if (t.exceed == 0) continue;
      x.push_back(n * eps * eps);
      y.push_back(-std::log(t.estimate));
    }
  }
  const LinearFit f = slope_fit(x, y);
  EXPECT_GE(f.r2, 0.9);
  EXPECT_NEAR(f.slope, c, 0.2);
}

TEST(Fit, Examples) {
  const std::vector<double> x{0, 1, 2, 3};
  const std::vector<double> y{1, 3, 5, 7};
  const LinearFit f = slope_fit(x, y);
  EXPECT_NEAR(f.slope, 2.0, 1e-14);
  EXPECT_NEAR(f.intercept, 1.0, 1e-14);
  EXPECT_NEAR(f.r2, 1.0, 1e-14);
  EXPECT_NEAR(slope_fit(std::vector<double>{0, 1, 2}, std::vector<double>{0, -1, -2}).slope, -1.0, 1e-14);
  EXPECT_THROW(slope_fit(std::vector<double>{0, 1}, std::vector<double>{0, 1}), DomainError);
  EXPECT_THROW(slope_fit(std::vector<double>{1, 1, 1}, std::vector<double>{0, 1, 2}), DomainError);
}

TEST(Fit, PerturbedLineMatchesClosedForm) {
  std::mt19937_64 rng(47);
  std::normal_distribution<double> noise(0.0, 1e-6);
  std::vector<double> x, y;
  for (int i = 0; i < 10; ++i) {
    x.push_back(0.3 * i - 1.0);
    y.push_back(-1.5 * x.back() + 0.25 + noise(rng));
  }
  const LinearFit f = slope_fit(x, y);
  EXPECT_NEAR(f.slope, -1.5, 1e-4);
  // closed-form OLS
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / 10, my = std::accumulate(y.begin(), y.end(), 0.0) / 10;
  double sxy = 0, sxx = 0;
  for (int i = 0; i < 10; ++i) sxy += (x[i] - mx) * (y[i] - my), sxx += (x[i] - mx) * (x[i] - mx);
  EXPECT_NEAR(f.slope, sxy / sxx, 1e-12);
  EXPECT_NEAR(f.intercept, my - sxy / sxx * mx, 1e-12);
}
