#pragma once

#include <stdexcept>
#include <string>

namespace pps {

/// Malformed arguments: bad knots, empty data, mismatched dimensions.
struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Evaluation outside the supported domain (no extrapolation).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// NaN objectives, failed inner solves, aborted chains.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad plan files, bad CLI flags, sampler settings that cannot work.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The design cannot separate theta from the nuisance function.
struct IdentifiabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pps
