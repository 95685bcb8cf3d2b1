#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace volregime {

enum class ErrorKind {
  Parse,
  Validation,
  EmptyInput,
  Precondition,
  DegenerateData,
  Parameter,
  Configuration,
  Transport,
  Service,
  PoolConstruction,
  Backtest,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::EmptyInput: return "empty input";
    case ErrorKind::Precondition: return "precondition violated";
    case ErrorKind::DegenerateData: return "degenerate data";
    case ErrorKind::Parameter: return "invalid parameters";
    case ErrorKind::Configuration: return "configuration error";
    case ErrorKind::Transport: return "transport error";
    case ErrorKind::Service: return "service error";
    case ErrorKind::PoolConstruction: return "pool construction failed";
    case ErrorKind::Backtest: return "backtest failed";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Malformed input text. Carries the 1-based line number when the source is a file.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0, std::string raw = {})
      : Error(ErrorKind::Parse,
              line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line),
        raw_(std::move(raw)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::size_t line_;
  std::string raw_;
};

/// Remote service answered with a non-success HTTP status.
class ServiceError : public Error {
 public:
  ServiceError(int status, const std::string& what)
      : Error(ErrorKind::Service, "HTTP " + std::to_string(status) + ": " + what),
        status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace volregime
