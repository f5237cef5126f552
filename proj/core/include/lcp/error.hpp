#pragma once

#include <stdexcept>
#include <string>

namespace lcp {

// Error categories double as CLI exit codes.
enum class ErrorKind : int { usage = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Tensor shapes that do not line up. Raised before any arithmetic happens.
class ShapeError : public DataError {
 public:
  explicit ShapeError(const std::string& what) : DataError("shape mismatch: " + what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

}  // namespace lcp
