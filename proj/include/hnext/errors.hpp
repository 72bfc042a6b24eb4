#pragma once

#include <stdexcept>
#include <string>

namespace hnext {

// Dimension or layout mismatch between grids, bundles or layers.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value (zero factor, even filter size, ...).
struct ParameterError : std::invalid_argument {
    explicit ParameterError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Stream orders requested by a layer do not match what the input carries.
struct WiringError : std::runtime_error {
    explicit WiringError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or inconsistent dataset content (empty split, label out of range, ...).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed container file (wrong magic, bad header).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Container payload shorter than its header promises.
struct LengthError : std::runtime_error {
    explicit LengthError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input that makes the requested reduction meaningless (empty mask support).
struct DegenerateInputError : std::runtime_error {
    explicit DegenerateInputError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hnext
