#pragma once

#include <stdexcept>
#include <string>

namespace selfens {

/// Base class for every error raised by the library. Each kind carries the
/// process exit code the CLI reports for it.
class Error : public std::runtime_error {
public:
  Error(const std::string &kind, const std::string &message, int exit_code)
      : std::runtime_error(message), kind_(kind), exit_code_(exit_code) {}

  const std::string &kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return exit_code_; }

private:
  std::string kind_;
  int exit_code_;
};

/// Bad arguments, shapes or configuration supplied by the caller.
class UsageError : public Error {
public:
  explicit UsageError(const std::string &message)
      : Error("usage_error", message, 1) {}
};

/// Tensor shapes that do not fit together.
class ShapeError : public Error {
public:
  explicit ShapeError(const std::string &message)
      : Error("shape_error", message, 1) {}
};

/// Malformed or missing input files: manifests, images, plans, checkpoints.
class DataError : public Error {
public:
  explicit DataError(const std::string &message)
      : Error("data_error", message, 2) {}
};

/// Non-finite losses or gradients.
class NumericError : public Error {
public:
  explicit NumericError(const std::string &message)
      : Error("numeric_error", message, 3) {}
};

} // namespace selfens
