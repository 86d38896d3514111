#pragma once

#include <stdexcept>

namespace bayesoc {

// Bad input: dimensions, malformed config or data files, violated type invariants.
// The CLI maps this to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical or environmental failure at run time (non-convergence, singular
// matrices, IO). The CLI maps this to exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bayesoc
