#ifndef PROD_COMMON_HPP_
#define PROD_COMMON_HPP_

#include <stdexcept>
#include <string>

namespace prod {

// Error taxonomy shared by all modules. The CLI maps UsageError to exit
// code 1 and every other prod::Error to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/array shape disagreement (matmul inner dims, KL support, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid numeric parameter (tau <= 0, eps out of range, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration (bad key, violated pipeline invariant, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input data (duplicate ids, unparseable lines, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// Training diverged (non-finite loss) or cannot proceed.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace prod

#endif  // PROD_COMMON_HPP_
