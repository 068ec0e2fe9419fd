#pragma once

#include <stdexcept>
#include <string>

namespace mlkrig {

/// Broad failure classes; the CLI maps these onto exit codes.
enum class ErrorKind { data, numerical, config };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ParameterError : Error {
  explicit ParameterError(const std::string& w) : Error(ErrorKind::config, w) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorKind::data, w) {}
};
struct DegenerateInputError : Error {
  explicit DegenerateInputError(const std::string& w) : Error(ErrorKind::data, w) {}
};
struct DegenerateDesignError : Error {
  explicit DegenerateDesignError(const std::string& w) : Error(ErrorKind::data, w) {}
};
struct InsufficientDataError : Error {
  explicit InsufficientDataError(const std::string& w) : Error(ErrorKind::data, w) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error(ErrorKind::data, w) {}
};
struct SchemaError : Error {
  explicit SchemaError(const std::string& w) : Error(ErrorKind::data, w) {}
};
struct NotPositiveDefiniteError : Error {
  explicit NotPositiveDefiniteError(const std::string& w) : Error(ErrorKind::numerical, w) {}
};
struct EstimationFailedError : Error {
  explicit EstimationFailedError(const std::string& w) : Error(ErrorKind::numerical, w) {}
};
struct EmptyMetricError : Error {
  explicit EmptyMetricError(const std::string& w) : Error(ErrorKind::data, w) {}
};

}  // namespace mlkrig
