#pragma once

#include <stdexcept>
#include <string>

namespace lpt {

// Each error family maps onto one CLI exit code (see app/commands.hpp).

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownTokenError : public DataError {
 public:
  explicit UnknownTokenError(std::string token)
      : DataError("unknown token '" + token + "'"), token_(std::move(token)) {}
  const std::string& token() const { return token_; }

 private:
  std::string token_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by Langevin dynamics; carries the step index at which the gradient went bad.
class ChainDivergedError : public NumericError {
 public:
  ChainDivergedError(int step, const std::string& what)
      : NumericError("langevin step " + std::to_string(step) + ": " + what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace lpt
