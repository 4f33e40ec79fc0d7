#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace smflow {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input outside the mathematical domain of an operation (off-manifold point,
/// non-anti-Hermitian generator, parameter out of range, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Chart evaluated at one of its singular points (e.g. sphere poles).
class SingularChartError : public Error {
 public:
  using Error::Error;
};

/// Sampling too coarse for the requested accuracy.
class ResolutionError : public Error {
 public:
  using Error::Error;
};

class UnsupportedOperation : public Error {
 public:
  using Error::Error;
};

/// Time step above the stability bound; carries the admissible step.
class RejectedStep : public Error {
 public:
  RejectedStep(const std::string& what, double admissible_dt)
      : Error(what), admissible_dt_(admissible_dt) {}
  double admissible_dt() const { return admissible_dt_; }

 private:
  double admissible_dt_;
};

/// Frame coefficients whose twist does not match the supplied holonomy.
class InconsistentHolonomy : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared during time stepping.
class BlowUpSuspected : public Error {
 public:
  BlowUpSuspected(const std::string& what, std::string diagnostics)
      : Error(what), diagnostics_(std::move(diagnostics)) {}
  const std::string& diagnostics() const { return diagnostics_; }

 private:
  std::string diagnostics_;
};

class NoConvergence : public Error {
 public:
  NoConvergence(const std::string& what, std::vector<double> factors)
      : Error(what), factors_(std::move(factors)) {}
  const std::vector<double>& factors() const { return factors_; }

 private:
  std::vector<double> factors_;
};

/// Bad command line or unknown suite name.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration; lists every violation found.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> violations)
      : Error(join(violations)), violations_(std::move(violations)) {}
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "invalid configuration:";
    for (const auto& s : v) out += "\n  - " + s;
    return out;
  }
  std::vector<std::string> violations_;
};

}  // namespace smflow
