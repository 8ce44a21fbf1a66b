#pragma once

#include <stdexcept>
#include <string>

namespace pg {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or axis mismatch. Messages name the offending shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An index (token id, gather index, select index) is out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Invalid model configuration or option values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Invalid prefix / response grouping (empty prefix, empty response, G == 0).
class LayoutError : public Error {
 public:
  using Error::Error;
};

// Caller-supplied data (tokens, flags) outside the accepted domain.
class InputError : public Error {
 public:
  using Error::Error;
};

// API misuse: backward on a non-scalar, backward twice, mixing tapes.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN or non-finite values where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pg
