#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace drift {

// Each kind maps to one CLI exit code (see cli/commands.hpp).
enum class ErrorKind {
  Usage,
  Config,
  Shape,
  Label,
  DegenerateBatch,
  Format,
  ArchitectureMismatch,
  Io,
  Numeric,
};

std::string_view error_kind_name(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace drift
