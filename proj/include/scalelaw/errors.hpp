#pragma once

#include <stdexcept>
#include <string>

namespace scalelaw {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed call: wrong vector lengths, empty inputs, bad flags.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Input outside the mathematical domain (nonpositive x, c1 + c2 = 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// FormSpec and parameters disagree structurally.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class NotRepresentableError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

class SolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace scalelaw
