#pragma once

#include <stdexcept>
#include <string>

namespace homog {

/// Malformed or dimensionally inconsistent problem description.
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure inside a solver (singular system, residual too large,
/// sign condition violated, non-decaying fit...).
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation budget was exhausted before the requested work was done.
class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace homog
