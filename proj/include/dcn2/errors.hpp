#pragma once

#include <stdexcept>
#include <string>

namespace dcn2 {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid model, run, or sweep configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A single input row could not be turned into a record.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Dataset does not match the declared profile.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

// Non-finite gradient or loss; training cannot continue.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// The input produced no usable rows.
class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

}  // namespace dcn2
