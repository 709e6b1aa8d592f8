#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace spst {

// Base of every error the engine raises. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

// Unknown tap or layer name.
class KeyError : public Error {
 public:
  using Error::Error;
};

// A file could not be opened for reading or writing.
class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// Finalizing an accumulator that never saw a pixel.
class EmptyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Raised by the optimizer when the objective stops being finite. Carries the
// last iterate whose loss was finite so callers can still save progress.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, std::vector<double> last_finite_x)
      : Error(what), last_finite_x_(std::move(last_finite_x)) {}

  const std::vector<double>& last_finite_x() const { return last_finite_x_; }

 private:
  std::vector<double> last_finite_x_;
};

}  // namespace spst
