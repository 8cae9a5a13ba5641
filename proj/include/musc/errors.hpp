#pragma once

#include <stdexcept>
#include <string>

namespace musc {

// Caller broke a documented precondition (shape, range, arity).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A NaN/Inf showed up where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input is well-formed but degenerate (e.g. an all-zero frame to normalize).
class DegenerateInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or unreadable on-disk data, truncated bitstreams.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Channel draw is rank deficient or too ill-conditioned for zero forcing.
class IllConditionedChannel : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

}  // namespace musc
