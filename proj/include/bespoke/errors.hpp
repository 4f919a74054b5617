#pragma once

#include <stdexcept>
#include <string>

namespace bespoke {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed specification, term grammar or configuration document.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input file does not match the expected column layout.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class SingularDesignError : public Error {
 public:
  using Error::Error;
};

class SeparationError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// A probability feeding a joint law left [1e-6, 1 - 1e-6].
class DegenerateLawError : public Error {
 public:
  using Error::Error;
};

// |delta^A(c)| fell below the relevance floor.
class WeakRelevanceError : public Error {
 public:
  using Error::Error;
};

class BootstrapInstabilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace bespoke
