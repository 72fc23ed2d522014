#pragma once

#include <stdexcept>
#include <string>

namespace npll {

// Each category maps onto one CLI exit code.
enum class ErrorKind {
  config = 2,
  data = 3,
  numeric = 4,
  integrity = 5,
  contract = 1,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config_error";
    case ErrorKind::data: return "data_error";
    case ErrorKind::numeric: return "numeric_error";
    case ErrorKind::integrity: return "integrity_error";
    case ErrorKind::contract: return "contract_violation";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

/// Missing dataset file or malformed dataset directory.
class DatasetFormatError : public Error {
 public:
  explicit DatasetFormatError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Malformed input line; `line` is 1-based.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(ErrorKind::data, file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class SamplingExhaustedError : public Error {
 public:
  explicit SamplingExhaustedError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class GroundingExplosionError : public Error {
 public:
  explicit GroundingExplosionError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

class IntegrityError : public Error {
 public:
  explicit IntegrityError(const std::string& what) : Error(ErrorKind::integrity, what) {}
};

/// A caller broke a documented precondition.
class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& what) : Error(ErrorKind::contract, what) {}
};

}  // namespace npll
