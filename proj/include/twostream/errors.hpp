#pragma once

#include <stdexcept>
#include <string>

namespace twostream {

// Error categories map to distinct CLI exit codes (see tools/).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FileError : std::runtime_error {
    explicit FileError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : FileError {
    explicit ParseError(const std::string& msg) : FileError(msg) {}
};

struct EvalError : std::runtime_error {
    explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace twostream
