#pragma once

#include <stdexcept>

namespace kvret {

/// Operand shapes do not conform. The message names the operation and the
/// offending shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Input data is inconsistent with the model or corpus (bad ids, schema).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kvret
