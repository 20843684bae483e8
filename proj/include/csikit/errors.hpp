#pragma once

#include <stdexcept>
#include <string>

namespace csikit {

// Base for everything csikit throws deliberately.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible tensor/matrix shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value (odd kernel required, bad ratio, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

// API misuse (backward on a non-scalar, calling a disabled module, ...).
class UsageError : public Error {
public:
    using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// File carries the wrong magic bytes.
class BadMagicError : public IoError {
public:
    using IoError::IoError;
};

// File carries an unsupported format version.
class VersionError : public IoError {
public:
    using IoError::IoError;
};

// Payload shorter than the header promises.
class TruncatedError : public IoError {
public:
    using IoError::IoError;
};

// Bitstream contents inconsistent with its header or codebook.
class CorruptStreamError : public IoError {
public:
    using IoError::IoError;
};

// Dataset content problems that are not I/O-level corruption.
class DataError : public Error {
public:
    using Error::Error;
};

} // namespace csikit
