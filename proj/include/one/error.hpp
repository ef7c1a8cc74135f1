#pragma once

#include <stdexcept>
#include <string>

namespace one {

// Error taxonomy. The CLI maps these onto process exit codes:
// ConfigError -> 2, DataError -> 3, NumericError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid shapes, mismatched dimensions, bad axes.
struct ShapeError : Error {
  using Error::Error;
};

// Math domain violations (log of non-positive values, division by zero,
// non-positive temperature).
struct DomainError : Error {
  using Error::Error;
};

// Inconsistent or invalid configuration / architecture specs.
struct ConfigError : Error {
  using Error::Error;
};

// Unreadable, truncated or malformed data and checkpoint files.
struct DataError : Error {
  using Error::Error;
};

// NaN/Inf produced by a forward op or optimizer step.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace one
