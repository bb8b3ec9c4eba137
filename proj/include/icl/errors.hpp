#pragma once

#include <stdexcept>
#include <string>

namespace icl {

// Violated precondition of a public operation (bad index, wrong arity, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Incompatible tensor shapes; the message names every shape involved.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Malformed configuration, checkpoint, CSV or dump file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace icl
