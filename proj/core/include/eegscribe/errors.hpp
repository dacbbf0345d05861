#pragma once

#include <stdexcept>
#include <string>

namespace eegscribe {

/// Shape or extent disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition of an operation was violated by otherwise well-formed input.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A numeric parameter is outside its admissible range.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A class index lies outside [0, K).
class LabelError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Matrix decomposition could not be carried out (rank deficiency, ...).
class DecompositionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optimisation produced a non-finite loss. Carries the last finite step.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, long last_finite_step)
      : std::runtime_error(what), last_finite_step_(last_finite_step) {}

  long last_finite_step() const noexcept { return last_finite_step_; }

 private:
  long last_finite_step_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A test trial was found among the training trials of a fold round.
class LeakageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace eegscribe
