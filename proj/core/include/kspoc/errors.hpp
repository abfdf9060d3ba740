#ifndef KSPOC_ERRORS_HPP
#define KSPOC_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace kspoc {

// Bad or inconsistent input configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation (negative time, theta <= 0, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Operation not available for the given descriptor kind (e.g. direct evaluator with a custom kernel).
class UnsupportedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Requested storage exceeds a configured cap, or a solver size limit.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A simulation failure annotated with where it happened (sweep point, replication).
class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A particle left the safe region of the field grid.
class EscapeError : public std::runtime_error {
 public:
  EscapeError(std::size_t particle, std::size_t step, double position, double limit)
      : std::runtime_error("particle " + std::to_string(particle) + " escaped the safe region at step " +
                           std::to_string(step) + " (x = " + std::to_string(position) +
                           ", |x| limit = " + std::to_string(limit) + ")"),
        particle_(particle),
        step_(step) {}

  // Bare point outside the safe region (no particle identity available).
  EscapeError(double position, double limit)
      : std::runtime_error("point x = " + std::to_string(position) + " lies outside the safe region |x| <= " +
                           std::to_string(limit)),
        particle_(npos),
        step_(npos) {}

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t particle() const { return particle_; }
  std::size_t step() const { return step_; }

 private:
  std::size_t particle_;
  std::size_t step_;
};

// Non-finite state in the Euler scheme. The regularized model cannot blow up, so this is a numerical fault.
class NumericalFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kspoc

#endif  // KSPOC_ERRORS_HPP
