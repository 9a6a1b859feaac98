#pragma once

#include <stdexcept>
#include <string>

namespace kdesign {

/// Base class of every error thrown by the toolkit. `kind()` is a stable
/// machine-readable tag used by the CLI's one-line error reporting.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

struct InvalidGridsize : Error {
  explicit InvalidGridsize(const std::string& w) : Error("invalid-gridsize", w) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error("shape-mismatch", w) {}
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& w) : Error("invalid-argument", w) {}
};

struct DegenerateInput : Error {
  explicit DegenerateInput(const std::string& w) : Error("degenerate-input", w) {}
};

struct NumericalFailure : Error {
  explicit NumericalFailure(const std::string& w) : Error("numerical-failure", w) {}
};

struct InfeasibleProjection : Error {
  explicit InfeasibleProjection(const std::string& w) : Error("infeasible-projection", w) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io", w) {}
  IoError(std::string kind, const std::string& w) : Error(std::move(kind), w) {}
};

struct CorruptHeader : IoError {
  explicit CorruptHeader(const std::string& w) : IoError("corrupt-header", w) {}
};

struct VersionMismatch : IoError {
  explicit VersionMismatch(const std::string& w) : IoError("version-mismatch", w) {}
};

struct TruncatedPayload : IoError {
  explicit TruncatedPayload(const std::string& w) : IoError("truncated-payload", w) {}
};

/// Thrown when an optimization run produces a non-finite loss; carries the
/// epoch at which it happened.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int epoch, const std::string& w)
      : Error("training-diverged", w), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

}  // namespace kdesign
