#pragma once

#include <stdexcept>
#include <string>

namespace krawdetect {

// Failure categories. The CLI maps these onto exit codes, so every thrown
// error carries one.
enum class ErrorKind {
  Format,
  Consistency,
  Truncation,
  Range,
  Order,
  Stability,
  Incomplete,
  Config,
  Degenerate,
  Shape,
  Version,
  Data,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Format: return "FormatError";
    case ErrorKind::Consistency: return "ConsistencyError";
    case ErrorKind::Truncation: return "TruncationError";
    case ErrorKind::Range: return "RangeError";
    case ErrorKind::Order: return "OrderError";
    case ErrorKind::Stability: return "StabilityError";
    case ErrorKind::Incomplete: return "IncompleteError";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::Degenerate: return "DegenerateError";
    case ErrorKind::Shape: return "ShapeError";
    case ErrorKind::Version: return "VersionError";
    case ErrorKind::Data: return "DataError";
    case ErrorKind::Io: return "IoError";
  }
  return "Error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Typed aliases so call sites and tests can catch one category.
template <ErrorKind K>
class TypedError : public Error {
 public:
  explicit TypedError(const std::string& what) : Error(K, what) {}
};

using FormatError = TypedError<ErrorKind::Format>;
using ConsistencyError = TypedError<ErrorKind::Consistency>;
using TruncationError = TypedError<ErrorKind::Truncation>;
using RangeError = TypedError<ErrorKind::Range>;
using OrderError = TypedError<ErrorKind::Order>;
using StabilityError = TypedError<ErrorKind::Stability>;
using IncompleteError = TypedError<ErrorKind::Incomplete>;
using ConfigError = TypedError<ErrorKind::Config>;
using DegenerateError = TypedError<ErrorKind::Degenerate>;
using ShapeError = TypedError<ErrorKind::Shape>;
using VersionError = TypedError<ErrorKind::Version>;
using DataError = TypedError<ErrorKind::Data>;
using IoError = TypedError<ErrorKind::Io>;

}  // namespace krawdetect
