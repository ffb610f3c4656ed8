#include "domex/error.hpp"

namespace domex {

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::usage:
      return 1;
    case ErrorKind::config:
      return 2;
    case ErrorKind::missing_prerequisite:
      return 3;
    case ErrorKind::backend:
    case ErrorKind::parse:
      return 4;
    case ErrorKind::validation:
    case ErrorKind::empty_request:
    case ErrorKind::resource:
    case ErrorKind::divergence:
    case ErrorKind::unsupported:
      return 5;
  }
  return 5;
}

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::config: return "config";
    case ErrorKind::missing_prerequisite: return "missing-prerequisite";
    case ErrorKind::backend: return "backend";
    case ErrorKind::parse: return "parse";
    case ErrorKind::validation: return "validation";
    case ErrorKind::empty_request: return "empty-request";
    case ErrorKind::resource: return "resource";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::unsupported: return "unsupported";
  }
  return "unknown";
}

}  // namespace domex
