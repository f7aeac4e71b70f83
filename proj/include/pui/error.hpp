#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace pui {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input failed validation (bad spec, missing column, malformed file).
/// The CLI maps these to exit code 1 and the service to HTTP 400.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class InvalidSpecError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class MissingColumnError : public ValidationError {
 public:
  MissingColumnError(const std::string& column)
      : ValidationError("missing column: " + column), column_(column) {}
  const std::string& column() const { return column_; }

 private:
  std::string column_;
};

class TimelineIntegrityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class OutOfRangeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class VariantMismatchError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class AnchorRequiredError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class AnchorConflictError : public Error {
 public:
  using Error::Error;
};

class RankDeficiencyError : public Error {
 public:
  RankDeficiencyError(const std::string& what, std::vector<std::string> columns)
      : Error(what), columns_(std::move(columns)) {}
  const std::vector<std::string>& columns() const { return columns_; }

 private:
  std::vector<std::string> columns_;
};

struct IterationTrace {
  int iteration = 0;
  double loglik = 0.0;
  double gradient_norm = 0.0;
  int halvings = 0;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::vector<IterationTrace> trace)
      : Error(what), trace_(std::move(trace)) {}
  const std::vector<IterationTrace>& trace() const { return trace_; }

 private:
  std::vector<IterationTrace> trace_;
};

class UnresolvedEffectError : public Error {
 public:
  using Error::Error;
};

class InfeasibleSystemError : public Error {
 public:
  InfeasibleSystemError(const std::string& what, std::vector<double> residuals)
      : Error(what), residuals_(std::move(residuals)) {}
  const std::vector<double>& residuals() const { return residuals_; }

 private:
  std::vector<double> residuals_;
};

class DegenerateOddsError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace pui
