#pragma once

#include <stdexcept>
#include <string>

namespace physattn {

// Base of every error raised by the library. The CLI maps subclasses onto
// process exit codes (config 2, data 3, numeric 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition of a call was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid model/training/run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation requires a structured grid but received an unstructured mesh.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Malformed, degenerate or inconsistent data (files, samples).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, solver non-convergence, undefined statistics.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace physattn
