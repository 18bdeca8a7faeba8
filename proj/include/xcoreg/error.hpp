// Exception types shared across the library.
#pragma once

#include <stdexcept>
#include <string>

namespace xcoreg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Registration could not continue: empty overlap, non-finite loss or gradient.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a file failed at the operating-system level.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace xcoreg
