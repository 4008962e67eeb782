#pragma once

#include <stdexcept>
#include <string>

namespace vmae {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data violates a documented precondition (ranges, divisibility).
class InputError : public Error {
 public:
  using Error::Error;
};

// Shapes or index sets disagree between collaborating values.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// A scalar hyperparameter is outside its domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or undefined normalizations.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file content; the message names the record or line.
class ParseError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace vmae
