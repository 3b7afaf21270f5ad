#pragma once

#include <stdexcept>
#include <string>

namespace nkn {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when array shapes or field sizes are incompatible.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when a computation produced NaN or Inf.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Raised on filesystem and format problems.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace nkn
