#pragma once

#include <stdexcept>
#include <string>

namespace rrpo {

// Bad or conflicting run configuration; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite losses/gradients or a failed training calibration; exit code 3.
struct NumericAbort : std::runtime_error {
    explicit NumericAbort(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rrpo
