#pragma once

#include <stdexcept>
#include <string>

namespace i2v {

// Shape or extent disagreement between operands.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration value or degenerate setup.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or a numeric guard tripped.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StepIndexError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Loss became non-finite during training.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, long step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

// Two parameter sets that should share a layout do not.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Internal contract broken, e.g. a gradient reached a frozen parameter.
class InvariantViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Missing or unreadable artifact on disk.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace i2v
