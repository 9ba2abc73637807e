#pragma once

#include <stdexcept>
#include <string>

namespace moi {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller handed in malformed arguments (wrong shapes, empty inputs, bad tags).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// A file did not conform to its schema. The message names the offending field.
class ParseError : public Error {
 public:
  ParseError(const std::string& field, const std::string& what)
      : Error("parse error at '" + field + "': " + what), field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Parsed data violated a domain invariant (duplicate ids, boxes out of bounds).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Model or training configuration is inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Feature cache does not cover a requested scene or object.
class MissingFeatureError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace moi
