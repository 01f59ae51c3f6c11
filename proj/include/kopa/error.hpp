#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kopa {

/// Root of every error the toolkit throws. The CLI maps the subclasses onto
/// process exit codes (see ExitCode in commands.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text. `line` is 1-based; 0 means "not line-specific".
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Binary file with bad magic, truncated payload or mismatched dimensions.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value (parity, ranges, unknown keys).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Inputs are well formed but inconsistent (unknown ids, single-class sets).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Every replacement entity yields a filtered (known) triple.
class CorruptionExhausted : public DataError {
 public:
  using DataError::DataError;
};

/// Inductive split leaves no training triples.
class DegenerateSplit : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite loss during optimization.
class TrainingError : public Error {
 public:
  TrainingError(std::size_t epoch, const std::string& what)
      : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace kopa
