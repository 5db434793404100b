#pragma once

#include <stdexcept>
#include <string>

namespace siem {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument did not hold (bad range, shape, name).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A computation produced non-finite values, lost stability or failed to converge.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing an artifact failed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace siem
