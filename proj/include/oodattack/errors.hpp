#pragma once

#include <stdexcept>
#include <string>

namespace oodattack {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller broke a documented precondition (non-scalar backward, bad distribution, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AttackError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A module error re-raised by the harness with the stage and victim it happened in.
class ExperimentError : public std::runtime_error {
 public:
  ExperimentError(std::string stage, std::string model, const std::string& what)
      : std::runtime_error(stage + (model.empty() ? "" : " [" + model + "]") + ": " + what),
        stage_(std::move(stage)),
        model_(std::move(model)) {}

  const std::string& stage() const noexcept { return stage_; }
  const std::string& model() const noexcept { return model_; }

 private:
  std::string stage_;
  std::string model_;
};

}  // namespace oodattack
