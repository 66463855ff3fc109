#pragma once

#include <stdexcept>
#include <string>

namespace intentctx {

/// Bad input: malformed files, unknown names, violated preconditions.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while computing: divergence, failed numerical checks.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace intentctx
