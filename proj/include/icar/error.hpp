#pragma once

#include <stdexcept>
#include <string>

namespace icar {

// Malformed input, invalid arguments or inconsistent dimensions.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Factorization failure, PSD violation, failed root finding, bad adaptation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InputError(message);
}

}  // namespace icar
