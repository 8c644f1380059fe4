#pragma once

#include <stdexcept>
#include <string>

namespace tvdb {

// Invalid configuration: bad shapes, mismatched models, unknown keys.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the domain of an operation.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values, divergence, or a singular schedule coefficient.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  NumericalError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}

  // Bridge step at which the failure occurred, or -1.
  int step() const { return step_; }

 private:
  int step_ = -1;
};

}  // namespace tvdb
