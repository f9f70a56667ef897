#pragma once

#include <stdexcept>
#include <string>

namespace dac {

// Shape mismatch between tensor operands.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller handed an argument that violates an operation's contract.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Math went somewhere it must not (zero norms, broken invariants).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Backward bookkeeping problems (leaf not reachable from the loss, ...).
struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Object used in the wrong phase (missing gradient before an update, ...).
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad run configuration or command usage.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File format / filesystem failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dac
