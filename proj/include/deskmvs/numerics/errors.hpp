#pragma once

#include <stdexcept>
#include <string>

namespace deskmvs {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Extents do not line up (rank, divisibility, mismatched operands).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A value left the finite range, or an input that must be finite was not.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A precondition on a scalar argument was violated (scale <= 0, D < 2, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File could not be read or written, or was malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace deskmvs
