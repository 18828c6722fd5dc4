#pragma once

#include <stdexcept>
#include <string>

namespace pcx {

// Bad files, bad shapes, out-of-range indices. CLI exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Degenerate vectors, failed factorizations, non-finite results. CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pcx
