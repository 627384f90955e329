#pragma once

#include <stdexcept>
#include <string>

namespace corthick {

/// Base class for all recoverable errors raised by the library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct OutOfBounds : Error {
    using Error::Error;
};

struct AlreadyCalibrated : Error {
    using Error::Error;
};

struct InsufficientRegion : Error {
    using Error::Error;
};

// Raised when a patch yields no usable profiles; the caller skips the patch.
struct EmptyPatch : Error {
    using Error::Error;
};

struct FitDiverged : Error {
    using Error::Error;
};

struct NotPositiveDefinite : Error {
    using Error::Error;
};

// Proposal collapse in an importance-sampling round (ESS < 2).
struct DegenerateWeights : Error {
    using Error::Error;
};

struct NoPatchSucceeded : Error {
    using Error::Error;
};

struct LengthMismatch : Error {
    using Error::Error;
};

/// Malformed or inconsistent input files / configuration.
struct DataError : Error {
    using Error::Error;
};

} // namespace corthick
