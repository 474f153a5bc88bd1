#pragma once

#include <stdexcept>
#include <string>

namespace cellgraph {

enum class ErrorKind {
  shape,
  domain,
  validation,
  parse,
  numeric,
  capacity,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape_error";
    case ErrorKind::domain: return "domain_error";
    case ErrorKind::validation: return "validation_error";
    case ErrorKind::parse: return "parse_error";
    case ErrorKind::numeric: return "numeric_error";
    case ErrorKind::capacity: return "capacity_error";
  }
  return "error";
}

/// Base of every error raised by the library. `kind()` lets callers (the CLI
/// in particular) map failures to exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::shape, what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(ErrorKind::domain, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(ErrorKind::parse, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

class CapacityError : public Error {
 public:
  explicit CapacityError(const std::string& what) : Error(ErrorKind::capacity, what) {}
};

}  // namespace cellgraph
