#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pyramnet {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kSuccess = 0,
  kConfig = 2,
  kData = 3,
  kCheckFailure = 4,
};

class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
  ExitCode exit_code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Invalid hyperparameters, flags or architecture switches.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, ExitCode::kConfig) {}
};

/// Tensor operands whose shapes do not agree.
class DimensionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Malformed or semantically invalid input data.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what, ExitCode::kData) {}
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : DataError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Checkpoint cannot be applied to the model it is loaded into.
class LoadError : public DataError {
 public:
  using DataError::DataError;
};

/// Numerical failure during optimization (e.g. non-finite gradients).
class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error(what, ExitCode::kCheckFailure) {}
};

/// Broken internal contract; indicates a bug rather than bad input.
class InternalError : public Error {
 public:
  explicit InternalError(const std::string& what) : Error(what, ExitCode::kCheckFailure) {}
};

}  // namespace pyramnet
