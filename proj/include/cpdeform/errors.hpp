#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cpdeform {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Rejection sampling exhausted its attempt budget.
class SamplingError : public Error {
 public:
  using Error::Error;
};

/// A particle fell outside the voxel grid it was binned into.
class OutOfBoundsError : public Error {
 public:
  using Error::Error;
};

/// Two grids (or arrays) that must agree in shape do not.
class ShapeMismatchError : public Error {
 public:
  using Error::Error;
};

/// A metric has no defined value for its inputs (IoU of two empty grids,
/// NIIoU with a perfect start, rank correlation of constant data).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class SimulationBlowup : public Error {
 public:
  SimulationBlowup(int step, const std::string& what)
      : Error("simulation blowup at step " + std::to_string(step) + ": " + what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

class PlacementError : public Error {
 public:
  using Error::Error;
};

class SolverFailure : public Error {
 public:
  using Error::Error;
};

class PipelineError : public Error {
 public:
  using Error::Error;
};

/// Configuration problem. Carries the offending line (0 when unknown) and field.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::size_t line = 0, std::string field = {})
      : Error(format(what, line, field)), line_(line), field_(std::move(field)) {}
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  static std::string format(const std::string& what, std::size_t line, const std::string& field) {
    std::string out;
    if (line > 0) out += "line " + std::to_string(line) + ": ";
    if (!field.empty()) out += "field '" + field + "': ";
    return out + what;
  }
  std::size_t line_;
  std::string field_;
};

}  // namespace cpdeform
