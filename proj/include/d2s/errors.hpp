#pragma once

#include <stdexcept>
#include <string>

namespace d2s {

// Base class for all library errors. Subclasses distinguish the failure
// domain so callers can map them to exit codes / messages.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand dimensions do not agree.
class ShapeError : public Error {
  public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration value (hyperparameter out of range, degenerate width).
class ConfigError : public Error {
  public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed or truncated file content.
class FormatError : public Error {
  public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Semantically invalid data (unknown ids, duplicates, empty collections).
class DataError : public Error {
  public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Non-finite value produced where a finite one is required.
class NumericError : public Error {
  public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace d2s
