#pragma once

#include <stdexcept>
#include <string>

namespace cascadeflow {

// Error taxonomy. The CLI maps each class onto a distinct exit status.

/// An input file is missing or unreadable.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data was readable but failed validation (malformed lines in strict
/// mode, dangling references, bad configuration values).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (e.g. unsorted counts).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// An internal consistency check failed. Always a bug.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace cascadeflow
