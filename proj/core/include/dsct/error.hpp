#pragma once

#include <stdexcept>
#include <string>

namespace dsct {

/// Bad input: malformed files, violated preconditions, inconsistent shapes.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical breakdown during a computation (non-finite values, underflow).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dsct
