// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace xatl {

/// Root of every error the library throws. The CLI maps subclasses onto exit
/// codes: ValidationError -> 1, RuntimeFailure -> 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: shapes, configs, incompatible checkpoints, malformed files.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Failure while running something that was valid to start (I/O, NaN loss).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DomainError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class MissingParameter : public ValidationError {
 public:
  explicit MissingParameter(const std::string& name)
      : ValidationError("missing parameter: " + name), name_(name) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

class NonFiniteError : public RuntimeFailure {
 public:
  NonFiniteError(const std::string& where, const std::string& what)
      : RuntimeFailure("non-finite value in " + where + ": " + what), where_(where) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

class IoError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

}  // namespace xatl
