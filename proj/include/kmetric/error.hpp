#pragma once

#include <stdexcept>
#include <string>

namespace kmetric {

/// Bad arguments, malformed files, or violated preconditions. CLI exit code 2.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Eigensolver failure, non-finite objective, or a matrix that is not PSD.
/// CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotPsdError : public NumericError {
 public:
  using NumericError::NumericError;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InputError(what);
}

}  // namespace detail
}  // namespace kmetric
