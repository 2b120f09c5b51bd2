#pragma once

#include <stdexcept>
#include <string>

namespace am {

/// Malformed or unreadable input data (file format violations, bad labels, I/O).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical breakdown: non-finite intermediates, singular systems, failed checks.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace am
