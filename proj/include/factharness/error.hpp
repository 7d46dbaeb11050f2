#pragma once

#include <stdexcept>
#include <string>

namespace factharness {

// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data (bad JSON line, bad vector file, bad checkpoint).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Structurally valid input that violates a contract (duplicate id,
// fractions not summing to one, mismatched lengths).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Config values that cannot be acted on (zero findings, missing endpoint).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor shape incompatibilities; message names the operation and shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// File system failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Remote NLI transport failures (timeout, connection refused).
class RemoteError : public Error {
 public:
  using Error::Error;
};

// Remote NLI responses that do not follow the wire protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace factharness
