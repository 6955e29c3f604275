#pragma once

#include <stdexcept>
#include <string>

namespace gdyna {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure. The CLI maps this to exit code 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

#define GDYNA_DEFINE_ERROR(Name, Base) \
  class Name : public Base {           \
   public:                             \
    using Base::Base;                  \
  };

GDYNA_DEFINE_ERROR(InvalidProbability, ConfigError)
GDYNA_DEFINE_ERROR(DimensionMismatch, ConfigError)
GDYNA_DEFINE_ERROR(IndexOutOfRange, ConfigError)
GDYNA_DEFINE_ERROR(MisalignedRecords, ConfigError)
GDYNA_DEFINE_ERROR(EmptyBuffer, Error)
GDYNA_DEFINE_ERROR(NonErgodicChain, NumericalError)
GDYNA_DEFINE_ERROR(SingularSystem, NumericalError)
GDYNA_DEFINE_ERROR(SingularMoment, NumericalError)
GDYNA_DEFINE_ERROR(SingularKeyMatrix, NumericalError)
GDYNA_DEFINE_ERROR(SingularResolvent, NumericalError)
GDYNA_DEFINE_ERROR(SingularAccumulator, NumericalError)
GDYNA_DEFINE_ERROR(DegenerateUpdate, NumericalError)
GDYNA_DEFINE_ERROR(UnsupportedFeature, NumericalError)
GDYNA_DEFINE_ERROR(UnsupportedAction, NumericalError)

#undef GDYNA_DEFINE_ERROR

/// Raised when an update produces NaN or Inf. Carries the step index when known.
class NonFiniteUpdate : public NumericalError {
 public:
  explicit NonFiniteUpdate(const std::string& what, long step = -1)
      : NumericalError(step >= 0 ? what + " (step " + std::to_string(step) + ")" : what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace gdyna
