#pragma once

#include <stdexcept>
#include <string>

namespace varjepa {

/// Caller passed something that violates an operation's precondition
/// (shape mismatch, out-of-range class, pixel outside [0,1], ...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced NaN/Inf or hit a singular matrix.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration document or CLI usage.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace varjepa
