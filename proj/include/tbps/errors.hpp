#pragma once

#include <stdexcept>
#include <string>

namespace tbps {

// Every failure raised by the library derives from Error. The CLI maps the
// category to a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed by a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or missing input data (files, labels, token ids).
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. calling backward() on a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace tbps
