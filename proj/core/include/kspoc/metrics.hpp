#ifndef KSPOC_METRICS_HPP
#define KSPOC_METRICS_HPP

// Functionals of empirical measures: Wasserstein distances between equal-size uniform clouds,
// moment estimators, tail probabilities and least-squares slopes.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace kspoc {

// Uniform-weight point cloud, M x d row-major.
class EmpiricalMeasure {
 public:
  EmpiricalMeasure(std::vector<double> points, int dim);

  int dim() const { return dim_; }
  std::size_t size() const { return points_.size() / static_cast<std::size_t>(dim_); }
  const std::vector<double>& points() const { return points_; }
  std::span<const double> point(std::size_t i) const { return {points_.data() + i * dim_, std::size_t(dim_)}; }

 private:
  std::vector<double> points_;
  int dim_;
};

enum class DistanceMethod { quantile_1d, assignment, sliced };
std::string to_string(DistanceMethod m);

struct DistanceReport {
  double value = 0.0;
  DistanceMethod method = DistanceMethod::quantile_1d;
  bool exact = true;
  std::size_t n_projections = 0;  // sliced only
  double std_error = 0.0;         // sliced only
};

inline constexpr std::size_t kAssignmentCap = 512;

DistanceReport w1_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);
DistanceReport w2_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);
// Exact optimal assignment for p in {1, 2}, any d <= 3, M <= cap.
DistanceReport wp_assignment(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, int p,
                             std::size_t cap = kAssignmentCap);
// Mean over random unit directions of the 1-D W1 of the projections.
DistanceReport sliced_w1(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, std::size_t n_projections,
                         std::uint64_t seed);

// Minimum-cost perfect matching on a square cost matrix (row-major); returns column of each row.
std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t m);

struct MomentReport {
  double theta = 0.0;  // or p for plain moments
  double value = 0.0;
  double std_error = 0.0;
  bool overflow = false;  // some exponent hit the cap; value is then a lower bound
};

// Sample mean of exp(theta |x|^2).
MomentReport sq_exp_moment(const EmpiricalMeasure& mu, double theta);
// Sample mean of |x|^p.
MomentReport p_moment(const EmpiricalMeasure& mu, double p);

// Particle paths sampled on a uniform time grid: runs[r][k] holds the N x d positions at times[k].
struct PathSample {
  int dim = 1;
  std::vector<double> times;
  std::vector<std::vector<std::vector<double>>> runs;
};

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

// E|X_t - X_s|^p over particles x replications. s, t must be grid times.
Estimate increment_moment(const PathSample& paths, double s, double t, double p);

struct TailEstimate {
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t exceed = 0;
  std::size_t n = 0;
};

inline constexpr std::size_t kMinTailSamples = 30;

// P(W > eps) from replication samples with the 95% Wilson score interval.
TailEstimate tail_probability(std::span<const double> samples, double eps);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

// Ordinary least squares y = slope x + intercept; at least 3 points with non-constant x.
LinearFit slope_fit(std::span<const double> x, std::span<const double> y);

}  // namespace kspoc

#endif  // KSPOC_METRICS_HPP
