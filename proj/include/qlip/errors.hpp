#pragma once

#include <stdexcept>
#include <string>

namespace qlip {

// Bad or contradictory configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A required artifact from an earlier stage is missing (CLI exit code 3).
struct PrereqError : std::runtime_error {
    explicit PrereqError(const std::string& what) : std::runtime_error(what) {}
};

// Training or estimation lost numeric footing (CLI exit code 4).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace qlip
