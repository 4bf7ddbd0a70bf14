#pragma once

#include <stdexcept>
#include <string>

namespace mslm {

// Process exit codes used by the CLI. Library code throws the matching
// exception type; the CLI maps it to the code.
enum class ExitCode : int {
    ok = 0,
    config = 2,
    io = 3,
    validation = 4,
    numerical = 5,
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace mslm
