#pragma once

#include <complex>
#include <stdexcept>
#include <string>

namespace hdrx {

using cdouble = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;

// Invalid configuration (non power-of-two FFT, delays beyond the CP, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller passed arguments that violate an operation's precondition.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tensor or grid shapes that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FittingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input outside a model's validity range.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Training diverged (NaN/Inf loss).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hdrx
