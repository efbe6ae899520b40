#pragma once

#include <stdexcept>
#include <string>

namespace mdrlab {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A NaN/Inf reached a tensor, loss, or gradient, or a domain guard tripped
// (log/sqrt of a non-positive value).
class NumericError : public Error {
 public:
  using Error::Error;
};

// An operation was attempted with the network in the wrong Train/Eval mode.
class ModeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class EnvError : public Error {
 public:
  using Error::Error;
};

}  // namespace mdrlab
