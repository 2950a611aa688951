#pragma once

#include <stdexcept>
#include <string>

namespace bdm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes do not agree.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Training diverged (non-finite loss or gradient).
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_ = 0;
};

/// Loaded data is well formed but inconsistent (e.g. dangling ids).
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace bdm
