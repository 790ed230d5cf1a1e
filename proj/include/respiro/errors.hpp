#pragma once

#include <stdexcept>
#include <string>

namespace respiro {

// Base of the library's error taxonomy. The CLI maps these onto exit codes,
// so new error kinds should subclass one of the categories below rather
// than throwing std::runtime_error directly.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad call arguments (out-of-range step index, wrong sample rate, ...).
struct ArgumentError : Error {
  using Error::Error;
};

// Tensor shape mismatches; message names both shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid configuration values (schedule endpoints, filterbank geometry, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input file; message carries the byte offset where parsing failed.
struct FormatError : Error {
  using Error::Error;
};

// Recognized container but unsupported encoding (e.g. non-PCM WAV codec).
struct UnsupportedError : Error {
  using Error::Error;
};

// Filesystem-level failures.
struct IoError : Error {
  using Error::Error;
};

// Malformed text record; message carries the line number.
struct ParseError : Error {
  using Error::Error;
};

// Consistency violations in otherwise well-formed data (duplicate ids,
// synthetic records in a test split, ...).
struct IntegrityError : Error {
  using Error::Error;
};

// A request the available data cannot satisfy (synthetic pool shortfall).
struct CapacityError : Error {
  using Error::Error;
};

// Missing or unusable sample data referenced by a manifest record.
struct DataError : Error {
  using Error::Error;
};

// Numeric failure during optimization (NaN gradients); message names the
// offending parameter.
struct TrainingError : Error {
  using Error::Error;
};

}  // namespace respiro
