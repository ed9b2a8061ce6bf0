#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace agentsync {

/// Base class for all toolkit errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid scenario or component configuration (bad dimensions, non-Hurwitz
/// chain coefficients, misaligned breakpoints, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Query outside a function's domain (negative time, inverted interval, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Expression text could not be parsed; carries the byte offset of the fault.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_ = 0;
};

/// Expression evaluation failed (division by zero, domain fault, overflow).
class EvalError : public Error {
public:
    using Error::Error;
};

/// A numerical procedure failed to produce a usable result.
class NumericError : public Error {
public:
    using Error::Error;
};

/// The integrated state left the finite range; carries the failure time.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, double time)
        : Error(what), time_(time) {}
    double time() const { return time_; }

private:
    double time_ = 0.0;
};

}  // namespace agentsync
