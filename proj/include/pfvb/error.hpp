#pragma once

#include <stdexcept>
#include <string>

namespace pfvb {

/// Base of every error raised by the library. Each class carries the process
/// exit code the command-line front end reports for it.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class DimensionMismatch : public InvalidArgument {
 public:
  DimensionMismatch(const std::string& what, long expected, long got)
      : InvalidArgument(what + ": expected length " + std::to_string(expected) +
                        ", got " + std::to_string(got)) {}
};

// Input data problems (CSV ingestion, response coding, predictors).
class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

class MissingColumn : public DataError {
 public:
  explicit MissingColumn(const std::string& column)
      : DataError("missing column '" + column + "'"), column_(column) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

class NonBinaryResponse : public DataError {
 public:
  using DataError::DataError;
};

class ConstantPredictor : public DataError {
 public:
  explicit ConstantPredictor(const std::string& column)
      : DataError("predictor '" + column + "' is constant and cannot be standardized"),
        column_(column) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, long line)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

// The p x p or n x n kernel system could not be factorized.
class SingularSystem : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 5; }
};

class NonConvergence : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 6; }
};

class ScalePolicyExceeded : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 7; }
};

class SchemaError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 8; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 9; }
};

/// Exit code used when a fit stopped at its iteration cap.
inline constexpr int kExitMaxIterExceeded = 10;

}  // namespace pfvb
