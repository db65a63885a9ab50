#pragma once

#include <stdexcept>
#include <string>

namespace pwflow {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN/Inf showed up where a finite value is required.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, double value)
      : Error(what + " (value " + std::to_string(value) + ")"), value_(value) {}
  explicit NumericError(const std::string& what) : Error(what), value_(0.0) {}

  [[nodiscard]] double value() const noexcept { return value_; }

 private:
  double value_;
};

/// Invalid options or inputs that violate an operation's preconditions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or version-mismatched files.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training diverged; carries the epoch so callers can retry with a new seed.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t epoch)
      : Error(what + " at epoch " + std::to_string(epoch)), epoch_(epoch) {}

  [[nodiscard]] std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace pwflow
