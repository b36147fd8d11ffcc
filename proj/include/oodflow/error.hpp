#pragma once

#include <stdexcept>
#include <string>

namespace oodflow {

// Error taxonomy shared by the library and the CLI exit-code mapping.
enum class ErrorKind {
  argument,      // bad call arguments / CLI flags
  state,         // API misuse (scoring before fit, uninitialized layer)
  registration,  // scorer registry conflicts / unknown names
  io,            // filesystem failures
  format,        // unrecognized magic / malformed container
  version,       // unsupported format version
  corruption,    // payload inconsistent with header, checksum mismatch
  validation,    // data violates invariants (non-finite values, bad labels)
  numerical,     // singular fits, non-finite loss
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::argument: return "argument";
    case ErrorKind::state: return "state";
    case ErrorKind::registration: return "registration";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::version: return "version";
    case ErrorKind::corruption: return "corruption";
    case ErrorKind::validation: return "validation";
    case ErrorKind::numerical: return "numerical";
  }
  return "unknown";
}

[[noreturn]] inline void throw_error(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace oodflow
