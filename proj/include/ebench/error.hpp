#pragma once

#include <stdexcept>
#include <string>

namespace ebench {

// Error taxonomy. ParseError/SchemaError/DomainError describe problems with
// the data itself and map to CLI exit code 1; ArgumentError describes bad
// configuration or API misuse and maps to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

}  // namespace ebench
