#pragma once

#include <stdexcept>
#include <string>

namespace chroma {

// Base class for every failure the library reports.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor dimension contract violated; the message names the offending axis.
struct ShapeError : Error {
  using Error::Error;
};

// Structural or numeric precondition violated (odd pool input, non-scalar
// loss, size not divisible by 16, ...).
struct PreconditionError : Error {
  using Error::Error;
};

// Bad user-supplied settings; distinct from runtime failures so the CLI can
// map it to a usage exit code.
struct ConfigError : Error {
  using Error::Error;
};

// File and image I/O.
struct IoError : Error {
  using Error::Error;
};

// Serialized data is malformed: bad magic, version mismatch, checksum.
struct FormatError : Error {
  using Error::Error;
};

// Non-finite loss during training; the message names the failing step.
struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace chroma
