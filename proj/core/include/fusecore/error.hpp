#pragma once

#include <stdexcept>
#include <string>

namespace fusecore {

// Base for every error the library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A batch with nothing to learn from (e.g. every loss position masked out).
class InvalidBatchError : public Error {
 public:
  using Error::Error;
};

// Sequence longer than the model's position table.
class LengthError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Training stages requested out of order.
class StageOrderError : public Error {
 public:
  using Error::Error;
};

}  // namespace fusecore
