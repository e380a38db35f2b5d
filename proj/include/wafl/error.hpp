#pragma once

#include <stdexcept>
#include <string>

namespace wafl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition violations: bad sizes, non-finite input, invalid config values.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Iterative numerics that failed to behave (diverging ascent, degenerate weights).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace wafl
