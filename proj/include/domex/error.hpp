#pragma once

#include <string>
#include <stdexcept>

namespace domex {

// Error classes surface as distinct process exit codes in the CLI.
enum class ErrorKind {
  usage,
  config,
  missing_prerequisite,
  backend,
  parse,
  validation,
  empty_request,
  resource,
  divergence,
  unsupported,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised when a language-model reply contains no recognizable list.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::string raw_text)
      : Error(ErrorKind::parse, message), raw_text_(std::move(raw_text)) {}

  const std::string& raw_text() const noexcept { return raw_text_; }

 private:
  std::string raw_text_;
};

// Raised by a pipeline stage that gave up after its retry budget. Carries the
// number of work items that completed before the failure.
class StageError : public Error {
 public:
  StageError(const std::string& message, std::size_t completed)
      : Error(ErrorKind::backend, message), completed_(completed) {}

  std::size_t completed() const noexcept { return completed_; }

 private:
  std::size_t completed_;
};

int exit_code_for(ErrorKind kind) noexcept;
const char* to_string(ErrorKind kind) noexcept;

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace domex
