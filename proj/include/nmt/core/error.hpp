#pragma once

#include <stdexcept>
#include <string>

namespace nmt {

// Base of every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or argument (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

// Failure while running an otherwise valid pipeline (exit code 4).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

// Tensor shape disagreement inside an op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace nmt
