#pragma once

#include <stdexcept>
#include <string>

namespace pksipm {

// Every failure the library raises derives from Error so callers (the CLI in
// particular) can map categories onto exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParameterError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct ResolutionError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct DegenerateError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct CompatibilityError : Error { using Error::Error; };

struct ConvergenceError : Error {
    double residual;
    int iterations;
    ConvergenceError(const std::string& msg, double res, int it)
        : Error(msg + " (residual " + std::to_string(res) + " after " + std::to_string(it) + " iterations)"),
          residual(res), iterations(it) {}
};

struct StepError : Error { using Error::Error; };

}  // namespace pksipm
