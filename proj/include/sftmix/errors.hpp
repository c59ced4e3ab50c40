#pragma once

#include <stdexcept>
#include <string>

namespace sftmix {

// Error taxonomy. Every throwing contract in the library maps onto one of
// these; the CLI translates them into exit codes (config/data/usage -> 2,
// failed verification -> 1).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad values fed into a numeric operation (NaN/Inf, negative probability, ...).
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

// Array shapes incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration (model, corpus, training recipe).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API precondition (non-scalar backward root, odd split, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// A sequence does not fit the context window.
class LengthError : public Error {
 public:
  using Error::Error;
};

// Mismatched ids between dataset, confidence file and split.
class DataError : public Error {
 public:
  using Error::Error;
};

// Unreadable or wrong-version serialized file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Checksum mismatch in a checkpoint.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace sftmix
