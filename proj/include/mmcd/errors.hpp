#pragma once

#include <stdexcept>
#include <string>

namespace mmcd {

// Base class for every recoverable failure raised by the library.
// The CLI maps subclasses onto its exit-code contract.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid caller input: bad shapes, bad ranges, malformed configuration.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ShapeError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

// Change events whose footprints overlap with contradictory semantics.
class ConflictError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

// Label value outside [0, num_classes).
class InvalidLabel : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

// Metric requested from a confusion matrix with no support for it.
class UndefinedMetric : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

// Filesystem / decode failures.
class IoError : public Error {
public:
    using Error::Error;
};

// Checkpoint whose architecture hash or structure does not match the model.
class IncompatibleCheckpoint : public Error {
public:
    using Error::Error;
};

// Loss became non-finite during fit().
class TrainingDiverged : public Error {
public:
    using Error::Error;
};

}  // namespace mmcd
