#pragma once

#include <stdexcept>
#include <string>

namespace shelfnet {

// Base of every error raised by the library. Subclasses name the contract
// that was violated so callers (and the CLI) can report it precisely.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A hyperparameter or structural option outside its valid range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad data handed to an otherwise valid operation (labels, image sizes, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward() on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class CorruptFileError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace shelfnet
