#pragma once

#include <stdexcept>
#include <string>

namespace argmaxgrad {

// Library code reports failures by throwing; the CLI maps exception types
// to process exit codes (see tools/).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/layer dimension mismatches.
struct ShapeError : Error {
  using Error::Error;
};

// A caller violated an operation's stated precondition.
struct ContractError : Error {
  using Error::Error;
};

// A value lies outside the operation's mathematical domain.
struct DomainError : Error {
  using Error::Error;
};

// Problem size exceeds what exhaustive enumeration supports.
struct CapacityError : Error {
  using Error::Error;
};

// Malformed input file; message carries the byte offset where parsing failed.
struct ParseError : Error {
  using Error::Error;
};

// Dataset acquisition failures: download errors, checksum mismatches.
struct DataError : Error {
  using Error::Error;
};

// Non-finite value produced where the contract requires finite results.
struct NumericError : Error {
  using Error::Error;
};

// Invalid experiment specification.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace argmaxgrad
