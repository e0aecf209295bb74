#pragma once

#include <cstddef>
#include <exception>
#include <string>

namespace cge {

// Base for every error raised by the library. `kind()` is a stable short tag
// used in the CLI's machine-readable error records.
class Error : public std::exception {
public:
    explicit Error(std::string what) : message_(std::move(what)) {}
    const char* what() const noexcept override { return message_.c_str(); }
    virtual const char* kind() const noexcept { return "error"; }
    // Prefixes the message with where the failure happened.
    void add_context(const std::string& where) { message_ = where + ": " + message_; }

private:
    std::string message_;
};

// Response value outside the family's support.
class DomainError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "domain"; }
};

// Invalid configuration (thresholds, group counts, lambda, ...).
class ConfigError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "config"; }
};

// Floating-point breakdown tied to a single observation.
class NumericError : public Error {
public:
    NumericError(const std::string& what, std::ptrdiff_t obs = -1)
        : Error(obs >= 0 ? what + " (observation " + std::to_string(obs) + ")" : what),
          observation(obs) {}
    const char* kind() const noexcept override { return "numeric"; }
    std::ptrdiff_t observation;
};

// Singular normal equations / information matrix. `column` is the first
// covariate found to be collinear with its predecessors, or -1 if unknown.
class RankError : public Error {
public:
    RankError(const std::string& what, std::ptrdiff_t col = -1, std::string col_name = {})
        : Error(what), column(col), column_name(std::move(col_name)) {}
    const char* kind() const noexcept override { return "rank"; }
    std::ptrdiff_t column;
    std::string column_name;
};

// Step halving exhausted without an ascent step.
class NoProgressError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "no_progress"; }
};

class LoadError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "load"; }
};

class PredictError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "predict"; }
};

class EstimationError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "estimation"; }
};

}  // namespace cge
