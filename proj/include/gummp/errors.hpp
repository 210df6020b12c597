// Error taxonomy shared by all gummp modules.
#pragma once

#include <stdexcept>
#include <string>

namespace gummp {

// Tensor/parameter dimension disagreement. Message names the shapes involved.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally empty input where at least one live element is required
// (all-masked softmax, empty sequence, K = 0, ...).
struct DegenerateInputError : std::runtime_error {
    explicit DegenerateInputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value or an operation misused against its contract.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// API contract violation (e.g. backward() on a non-scalar node).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed dataset input; carries the offending line when known.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint/file integrity failure (bad magic, checksum, truncation).
struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint/config version or shape incompatibility.
struct VersionError : std::runtime_error {
    explicit VersionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value detected during numeric work.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gummp
