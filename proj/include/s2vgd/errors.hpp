#pragma once

#include <stdexcept>
#include <string>

namespace s2vgd {

// Shape or layout disagreement between arguments.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Bad user-supplied configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Unreadable or malformed input data (CLI exit code 3).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical breakdown: NaN/Inf, non-SPD covariance, collapsed Householder
// vector (CLI exit code 4).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace s2vgd
