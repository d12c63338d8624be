#pragma once

#include <stdexcept>
#include <string>

namespace levelseg {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad configuration: unknown keys, invalid values, rejected flag combinations.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Numerical failure: non-finite values, diverging optimization.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

/// Filesystem and format problems: missing files, corrupt checkpoints.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

/// Operand shape violations; the message names both shapes.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

}  // namespace levelseg
