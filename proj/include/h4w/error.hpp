#pragma once

#include <stdexcept>
#include <string>

namespace h4w {

enum class ErrorKind {
  ShapeMismatch,
  DegenerateInput,
  NotARotation,
  DegenerateBox,
  InvalidTree,
  BehindCamera,
  UnknownMode,
  NotScalar,
  DetachedGraph,
  MissingGT,
  Degenerate,
  IOFailure,
  ConfigError,
};

const char* to_string(ErrorKind kind);

// Single exception type; callers dispatch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace h4w
