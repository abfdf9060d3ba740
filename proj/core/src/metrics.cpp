#include "kspoc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kspoc/errors.hpp"
#include "kspoc/rng.hpp"

namespace kspoc {

namespace {

constexpr double kExpCap = 709.0;  // exp(709) is still finite
constexpr double kWilsonZ = 1.959963984540054;
constexpr std::uint64_t kSlicedStream = 0x534C4943ULL;

void require_same_shape(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.dim() != nu.dim()) throw ConfigError("measures live in different dimensions");
  if (mu.size() != nu.size()) {
    throw ConfigError("equal sample counts required (got " + std::to_string(mu.size()) + " and " +
                      std::to_string(nu.size()) + "); unequal sizes are not supported in this version");
  }
}

std::vector<double> sorted(std::span<const double> v) {
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  return s;
}

void require_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.dim() == nu.dim() && mu.size() != nu.size()) {
    throw ConfigError("quantile method needs equal sample counts (got " + std::to_string(mu.size()) + " and " +
                      std::to_string(nu.size()) +
                      "); replicate both clouds to a common size and use the assignment method (wp_assignment)");
  }
  require_same_shape(mu, nu);
  if (mu.dim() != 1) throw ConfigError("quantile method needs d = 1; use wp_assignment or sliced_w1");
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return s;
}

}  // namespace

EmpiricalMeasure::EmpiricalMeasure(std::vector<double> points, int dim) : points_(std::move(points)), dim_(dim) {
  if (dim < 1 || dim > 3) throw ConfigError("point dimension must be 1, 2 or 3");
  if (points_.empty() || points_.size() % static_cast<std::size_t>(dim) != 0) {
    throw ConfigError("empirical measure needs M >= 1 points of dimension " + std::to_string(dim));
  }
  for (double v : points_) {
    if (!std::isfinite(v)) throw ConfigError("empirical measure has a non-finite coordinate");
  }
}

std::string to_string(DistanceMethod m) {
  switch (m) {
    case DistanceMethod::quantile_1d: return "quantile_1d";
    case DistanceMethod::assignment: return "assignment";
    case DistanceMethod::sliced: return "sliced";
  }
  return "unknown";
}

DistanceReport w1_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  require_1d(mu, nu);
  const auto a = sorted(mu.points()), b = sorted(nu.points());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return {s / static_cast<double>(a.size()), DistanceMethod::quantile_1d, true, 0, 0.0};
}

DistanceReport w2_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  require_1d(mu, nu);
  const auto a = sorted(mu.points()), b = sorted(nu.points());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return {std::sqrt(s / static_cast<double>(a.size())), DistanceMethod::quantile_1d, true, 0, 0.0};
}

// Shortest augmenting path with potentials (Jonker-Volgenant style), O(m^3).
std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t m) {
  if (cost.size() != m * m) throw ConfigError("assignment cost matrix must be square");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(m + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<std::size_t> match(m + 1, 0), way(m + 1, 0);  // match[col] = row, 1-based, 0 = free
  std::vector<char> used(m + 1);
  for (std::size_t i = 1; i <= m; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of_row(m);
  for (std::size_t j = 1; j <= m; ++j) col_of_row[match[j] - 1] = j - 1;
  return col_of_row;
}

DistanceReport wp_assignment(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, int p, std::size_t cap) {
  require_same_shape(mu, nu);
  if (p != 1 && p != 2) throw DomainError("wp_assignment supports p = 1 or p = 2");
  const std::size_t m = mu.size();
  if (m > cap) {
    throw CapacityError("assignment solver is capped at M = " + std::to_string(cap) + " (got " + std::to_string(m) +
                        "); use sliced_w1 for larger clouds");
  }
  std::vector<double> cost(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double d2 = sq_dist(mu.point(i), nu.point(j));
      cost[i * m + j] = p == 2 ? d2 : std::sqrt(d2);
    }
  }
  const auto match = solve_assignment(cost, m);
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) s += cost[i * m + match[i]];
  s /= static_cast<double>(m);
  return {p == 2 ? std::sqrt(s) : s, DistanceMethod::assignment, true, 0, 0.0};
}

DistanceReport sliced_w1(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, std::size_t n_projections,
                         std::uint64_t seed) {
  require_same_shape(mu, nu);
  if (mu.dim() < 2) throw DomainError("sliced_w1 is for d >= 2; use w1_1d");
  if (n_projections == 0) throw ConfigError("sliced_w1 needs at least one projection");
  const int d = mu.dim();
  const std::size_t m = mu.size();
  CounterStream rng(seed, kSlicedStream);
  std::vector<double> a(m), b(m), vals(n_projections);
  double dir[3];
  for (std::size_t k = 0; k < n_projections; ++k) {
    double norm = 0.0;
    while (norm < 1e-12) {
      norm = 0.0;
      for (int c = 0; c < d; ++c) {
        dir[c] = rng.normal();
        norm += dir[c] * dir[c];
      }
      norm = std::sqrt(norm);
    }
    for (int c = 0; c < d; ++c) dir[c] /= norm;
    for (std::size_t i = 0; i < m; ++i) {
      a[i] = b[i] = 0.0;
      for (int c = 0; c < d; ++c) {
        a[i] += dir[c] * mu.point(i)[c];
        b[i] += dir[c] * nu.point(i)[c];
      }
    }
    vals[k] = w1_1d(EmpiricalMeasure(a, 1), EmpiricalMeasure(b, 1)).value;
  }
  const double n = static_cast<double>(n_projections);
  const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : vals) ss += (v - mean) * (v - mean);
  const double se = n_projections > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return {mean, DistanceMethod::sliced, false, n_projections, se};
}

namespace {

MomentReport mean_report(const std::vector<double>& vals, double param, bool overflow) {
  const double n = static_cast<double>(vals.size());
  const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : vals) ss += (v - mean) * (v - mean);
  return {param, mean, vals.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0, overflow};
}

}  // namespace

MomentReport sq_exp_moment(const EmpiricalMeasure& mu, double theta) {
  if (!(theta > 0.0)) throw DomainError("sq_exp_moment needs theta > 0");
  std::vector<double> vals(mu.size());
  bool overflow = false;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    double arg = theta * sq_dist(mu.point(i), std::vector<double>(mu.dim(), 0.0));
    if (arg > kExpCap) {
      arg = kExpCap;
      overflow = true;
    }
    vals[i] = std::exp(arg);
  }
  // With clamped terms the sum itself may still overflow; scale before averaging.
  if (overflow) {
    const double n = static_cast<double>(vals.size());
    double mean = 0.0;
    for (double v : vals) mean += v / n;
    return {theta, mean, 0.0, true};
  }
  return mean_report(vals, theta, false);
}

MomentReport p_moment(const EmpiricalMeasure& mu, double p) {
  if (!(p > 0.0)) throw DomainError("p_moment needs p > 0");
  std::vector<double> vals(mu.size());
  const std::vector<double> zero(mu.dim(), 0.0);
  for (std::size_t i = 0; i < mu.size(); ++i) vals[i] = std::pow(std::sqrt(sq_dist(mu.point(i), zero)), p);
  return mean_report(vals, p, false);
}

Estimate increment_moment(const PathSample& paths, double s, double t, double p) {
  if (!(p > 0.0)) throw DomainError("increment moment needs p > 0");
  if (paths.runs.empty() || paths.times.empty()) throw ConfigError("increment moment needs at least one path");
  auto index_of = [&](double time) {
    for (std::size_t k = 0; k < paths.times.size(); ++k) {
      if (std::abs(paths.times[k] - time) <= 1e-9 * std::max(1.0, std::abs(time))) return k;
    }
    throw DomainError("time " + std::to_string(time) + " is not on the sampling grid");
  };
  const std::size_t ks = index_of(s), kt = index_of(t);
  std::vector<double> vals;
  for (const auto& run : paths.runs) {
    if (run.size() != paths.times.size()) throw ConfigError("path sample has a run with the wrong number of times");
    const auto& xs = run[ks];
    const auto& xt = run[kt];
    const std::size_t n = xs.size() / static_cast<std::size_t>(paths.dim);
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = 0.0;
      for (int c = 0; c < paths.dim; ++c) {
        const double d = xt[i * paths.dim + c] - xs[i * paths.dim + c];
        d2 += d * d;
      }
      vals.push_back(std::pow(std::sqrt(d2), p));
    }
  }
  const MomentReport r = mean_report(vals, p, false);
  return {r.value, r.std_error, vals.size()};
}

TailEstimate tail_probability(std::span<const double> samples, double eps) {
  if (samples.size() < kMinTailSamples) {
    throw ConfigError("tail estimation needs at least " + std::to_string(kMinTailSamples) + " replications (got " +
                      std::to_string(samples.size()) + ")");
  }
  TailEstimate out;
  out.n = samples.size();
  for (double v : samples) out.exceed += v > eps ? 1 : 0;
  const double n = static_cast<double>(out.n);
  const double ph = static_cast<double>(out.exceed) / n;
  const double z2 = kWilsonZ * kWilsonZ;
  const double denom = 1.0 + z2 / n;
  const double centre = (ph + z2 / (2.0 * n)) / denom;
  const double half = kWilsonZ * std::sqrt(ph * (1.0 - ph) / n + z2 / (4.0 * n * n)) / denom;
  out.estimate = ph;
  out.lower = std::max(0.0, centre - half);
  out.upper = std::min(1.0, centre + half);
  return out;
}

LinearFit slope_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ConfigError("slope fit needs matching x and y lengths");
  if (x.size() < 3) throw DomainError("slope fit needs at least 3 points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 1e-300)) throw DomainError("slope fit: x values are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.slope * x[i] + f.intercept);
    sse += r * r;
  }
  f.r2 = syy > 0.0 ? 1.0 - sse / syy : (sse == 0.0 ? 1.0 : 0.0);
  return f;
}

}  // namespace kspoc
