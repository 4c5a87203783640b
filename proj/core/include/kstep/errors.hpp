#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace kstep {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An input lies outside the range where a formula or model is defined.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A configuration file or flag is missing a key or has a malformed value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure failed: singular system, non-convergence, overflow.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A criterion was asked for a derivative it does not provide.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// Criterion evaluation failed at a probe point. `coordinate` names the
/// perturbed coordinate when the failure happened inside a difference quotient.
class EvaluationError : public Error {
 public:
  explicit EvaluationError(const std::string& what, std::optional<int> coordinate = std::nullopt)
      : Error(what), coordinate_(coordinate) {}

  std::optional<int> coordinate() const noexcept { return coordinate_; }

 private:
  std::optional<int> coordinate_;
};

}  // namespace kstep
