#pragma once

#include <stdexcept>
#include <string>

namespace gdpo {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad inputs: malformed files, invalid configs, violated preconditions.
// The CLI maps these to exit code 2.
struct ValidationError : Error {
    using Error::Error;
};

struct ParseError : ValidationError {
    using ValidationError::ValidationError;
};

struct VocabError : ValidationError {
    using ValidationError::ValidationError;
};

struct ShapeError : ValidationError {
    using ValidationError::ValidationError;
};

struct ConfigError : ValidationError {
    using ValidationError::ValidationError;
};

// Nonpositive rewards and similar domain violations.
struct DomainError : ValidationError {
    using ValidationError::ValidationError;
};

// Non-finite values where finite ones are required. CLI exit code 3.
struct NumericError : Error {
    using Error::Error;
};

// Optimization ran out of budget before reaching its target.
struct ConvergenceError : NumericError {
    double final_residual;
    ConvergenceError(const std::string& msg, double residual)
        : NumericError(msg), final_residual(residual) {}
};

}  // namespace gdpo
