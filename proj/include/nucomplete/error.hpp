#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nucomplete {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An argument lies outside the domain of the operation (negative probability,
/// zero divisor, non-positive weight, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An iterative routine failed to produce a usable result.
class SolverFailure : public Error {
public:
    using Error::Error;
};

/// The weight-construction box and the spikiness cap cannot both hold.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// Input carries no information to estimate from (for example all-zero counts).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration: bad key, empty split, zero-variance regressor.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Not enough populated rows or columns for a regression.
class InsufficientDataError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed text input. `line()` is 1-based, 0 when unknown.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

} // namespace nucomplete
