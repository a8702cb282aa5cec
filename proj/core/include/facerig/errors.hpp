#pragma once

#include <stdexcept>
#include <string>

namespace facerig {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
  /// Short machine-readable category, e.g. "contract_violation".
  [[nodiscard]] virtual const char* kind() const noexcept { return "error"; }
};

/// A caller broke an operation's precondition (dimension mismatch, bad index, out-of-range value).
class ContractViolation : public Error {
public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "contract_violation"; }
};

class InvalidSize : public Error {
public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "invalid_size"; }
};

/// Landmark configuration is rank deficient (collinear or coincident points).
class DegenerateGeometry : public Error {
public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "degenerate_geometry"; }
};

class IllConditioned : public Error {
public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "ill_conditioned"; }
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "divergence"; }
};

class DatasetQualityError : public Error {
public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "dataset_quality"; }
};

/// File could not be read, written or parsed.
class IoError : public Error {
public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "io_error"; }
};

}  // namespace facerig
