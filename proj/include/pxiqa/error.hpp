#pragma once

#include <stdexcept>
#include <string>

namespace pxiqa {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes; the message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf or an invalid denominator surfaced by a checked computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed files, truncated streams, manifest mismatches.
class FormatError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace pxiqa
