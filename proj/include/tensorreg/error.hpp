#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tensorreg {

/// Base of every error raised by the library. The CLI maps ArgumentError to
/// exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible dimension vectors or matrix shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument value (mode out of range, bad size, unknown option).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or otherwise invalid input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Singular systems, optimizer divergence, likelihood underflow.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Model parameters violate an invariant (e.g. covariance not positive definite).
class ModelIntegrityError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. `line` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A mixture component collected too little responsibility mass to be refit.
class DegenerateComponentError : public NumericalError {
 public:
  DegenerateComponentError(const std::string& what, std::size_t component)
      : NumericalError(what), component_(component) {}
  std::size_t component() const noexcept { return component_; }

 private:
  std::size_t component_;
};

}  // namespace tensorreg
