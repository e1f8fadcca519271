#pragma once

#include <stdexcept>
#include <string>

namespace signet {

/// Root of the library's exception hierarchy. Each subclass maps onto one of
/// the CLI exit-code families (validation, I/O, numeric).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Validation family.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// I/O family.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Raised while parsing dataset files; carries the 1-based data row that
/// failed (0 when the failure is not tied to a row).
class LoadError : public IoError {
 public:
  LoadError(const std::string& what, std::size_t row = 0)
      : IoError(row == 0 ? what : what + " (row " + std::to_string(row) + ")"),
        row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// Numeric family.
class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DegenerateError : public NumericError {
 public:
  using NumericError::NumericError;
};

class RankError : public NumericError {
 public:
  using NumericError::NumericError;
};

class ResourceError : public Error {
 public:
  using Error::Error;
};

}  // namespace signet
