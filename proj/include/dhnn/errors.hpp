#pragma once

#include <stdexcept>
#include <string>

namespace dhnn {

// Bad flags, incompatible options. CLI exit code 2.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing/malformed input files, dimension mismatches. CLI exit code 3.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Divergence, step-size underflow, non-finite values. CLI exit code 4.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CheckpointError : DataError {
    enum class Kind { bad_magic, bad_version, truncated, bad_shape };
    Kind kind;
    CheckpointError(Kind k, const std::string& msg) : DataError(msg), kind(k) {}
};

}  // namespace dhnn
