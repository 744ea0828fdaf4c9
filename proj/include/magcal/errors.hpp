#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace magcal {

/// Failure category; the CLI maps these onto its exit codes.
enum class ErrorKind { Usage, Data, Numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Malformed, degenerate or insufficient input data.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

/// A computation produced something unusable (non-finite cost, singular matrix).
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what, std::optional<std::size_t> step = std::nullopt)
      : Error(ErrorKind::Numerical, step ? what + " (step " + std::to_string(*step) + ")" : what),
        step_(step) {}
  std::optional<std::size_t> step() const noexcept { return step_; }

 private:
  std::optional<std::size_t> step_;
};

}  // namespace magcal
