#pragma once

#include <stdexcept>
#include <string>

namespace splitsim {

// Error taxonomy shared by the whole library. The C API and the CLI map
// these onto stable numeric codes (see splitsim.h).
enum class ErrorKind {
    InvalidParameter,  // bad scalar argument (negative std, m <= 0, ...)
    Shape,             // matrix / tensor dimension mismatch
    Bracketing,        // root finder given a bracket without a sign change
    Accuracy,          // quadrature failed to reach the requested tolerance
    InvalidSplit,      // splitting point outside [1, L-1]
    InvalidInput,      // malformed runtime input (empty sequence, bad token id)
    MissingInput,      // referenced file or upstream artifact does not exist
    InvalidConfig,     // experiment config failed validation
    Runtime,           // training diverged or another unrecoverable failure
    Unavailable,       // requested component not ready (e.g. unfitted surrogate)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

// Quadrature failure still carries the best available estimate so callers
// can decide whether it is usable.
class AccuracyError : public Error {
public:
    AccuracyError(const std::string& msg, double best)
        : Error(ErrorKind::Accuracy, msg), best_estimate_(best) {}

    double best_estimate() const noexcept { return best_estimate_; }

private:
    double best_estimate_;
};

}  // namespace splitsim
