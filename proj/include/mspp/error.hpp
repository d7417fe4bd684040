#pragma once

#include <stdexcept>
#include <string>

namespace mspp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

/// Malformed or inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "config"; }
};

/// Input data that violates a schema or a type invariant.
class DataError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "data"; }
};

/// Vectors or matrices whose sizes do not agree with (m, p, r).
class DimensionError : public DataError {
public:
    using DataError::DataError;
    const char* kind() const noexcept override { return "dimension"; }
};

/// Overflow, singular systems, unidentifiable blocks and similar failures.
class NumericalError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "numerical"; }
};

class OverflowError : public NumericalError {
public:
    using NumericalError::NumericalError;
    const char* kind() const noexcept override { return "overflow"; }
};

class SingularSystemError : public NumericalError {
public:
    using NumericalError::NumericalError;
    const char* kind() const noexcept override { return "singular"; }
};

class UnidentifiableError : public NumericalError {
public:
    using NumericalError::NumericalError;
    const char* kind() const noexcept override { return "unidentifiable"; }
};

} // namespace mspp
