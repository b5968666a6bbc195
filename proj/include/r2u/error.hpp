#pragma once

#include <stdexcept>
#include <string>

namespace r2u {

// Base of every error raised by the library. Each subclass names the
// category of failure so callers (and the CLI) can report it precisely.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Vector/tensor shapes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A scalar argument outside its documented range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Input data that cannot be used as given (too short, empty, absent class).
class InputError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data (IDX files, snapshots).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Experiment configuration rejected before any compute starts.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced by arithmetic.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace r2u
