#pragma once

#include <stdexcept>
#include <string>

namespace crackseg {

/// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor dimension / shape mismatch; message names the offending axis.
struct ShapeError : Error {
  using Error::Error;
};

/// Invalid configuration value (channel counts, group counts, fractions, ...).
struct ConfigError : Error {
  using Error::Error;
};

/// Numerical domain violation (non-finite values, nonpositive delta, ...).
struct NumericError : Error {
  using Error::Error;
};

/// API misuse (backward on untracked tensor, empty dataset, ...).
struct UsageError : Error {
  using Error::Error;
};

/// Scan path problems (non-bijective permutation, length mismatch).
struct PathError : Error {
  using Error::Error;
};

/// File / directory problems.
struct IoError : Error {
  using Error::Error;
};

}  // namespace crackseg
