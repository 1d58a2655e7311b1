#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dor {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or precondition violated by the caller (a programming error).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data that cannot be used: unreadable files, empty datasets,
// incompatible vocabularies.
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed input line. The message always carries the 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : DataError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Numerical failure during optimisation (non-finite loss).
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}

  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// All-entries-masked attention neighbourhood.
class DegenerateNeighborhood : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace dor
