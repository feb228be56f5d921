#pragma once

#include <stdexcept>
#include <string>

namespace seam {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes (extent mismatch, degenerate output, ...).
class ShapeError : public Error {
  public:
    using Error::Error;
};

/// Mixed fp32/fp64 operands or an unsupported dtype tag.
class DTypeError : public Error {
  public:
    using Error::Error;
};

/// A NaN or Inf appeared in an operation output or gradient.
class NumericError : public Error {
  public:
    using Error::Error;
};

/// Invalid inputs: out-of-range labels, bad configuration, malformed data.
class ValidationError : public Error {
  public:
    using Error::Error;
};

/// File-level I/O failure (open/read/write/rename).
class IoError : public Error {
  public:
    using Error::Error;
};

/// File does not start with the expected magic bytes.
class BadMagicError : public IoError {
  public:
    using IoError::IoError;
};

/// File carries an unsupported format version.
class VersionError : public IoError {
  public:
    using IoError::IoError;
};

/// File ended before the declared payload was fully read.
class TruncatedError : public IoError {
  public:
    using IoError::IoError;
};

} // namespace seam
