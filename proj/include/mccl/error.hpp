#pragma once

#include <stdexcept>
#include <string>

namespace mccl {

/// Base class for every error raised by the library. The CLI maps the
/// concrete subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid hyperparameters, infeasible generator specs, bad CLI input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent dataset / checkpoint / embedding files.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : DataError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite loss or parameters during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace mccl
