#pragma once

#include <stdexcept>
#include <string>

namespace incise {

// Error taxonomy mirrors the CLI exit codes: config=2, data=3, numerical=4.

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error("config: " + msg) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error("data: " + msg) {}
};

class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error("numerical: " + msg) {}
};

} // namespace incise
