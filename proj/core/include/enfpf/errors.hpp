#pragma once

#include <stdexcept>
#include <string>

namespace enfpf {

/// Precondition or dimension violation in a public API call.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A trajectory left the representable range (NaN/Inf) during integration.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::string what, double time, int member, int substep)
      : std::runtime_error(std::move(what)), time(time), member(member), substep(substep) {}
  double time;
  int member;   // -1 when not member-specific
  int substep;  // -1 when not substep-specific
};

/// Empirical covariance could not be factorized (e.g. J <= d for the score term).
class SingularCovarianceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Explicit time integration of the operator ODEs exceeded its stability range.
class StabilityError : public std::runtime_error {
 public:
  StabilityError(std::string what, double suggested_dt)
      : std::runtime_error(std::move(what)), suggested_dt(suggested_dt) {}
  double suggested_dt;
};

}  // namespace enfpf
