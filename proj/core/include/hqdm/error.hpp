#pragma once

#include <stdexcept>
#include <string>

namespace hqdm {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments: shape mismatch, out-of-range order/bits/timestep, invalid config.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Integer accumulator left the int64 range.
class OverflowError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced during training or inference.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace hqdm
