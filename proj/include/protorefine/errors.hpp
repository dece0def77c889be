#pragma once

#include <stdexcept>
#include <string>

namespace protorefine {

// Malformed or inconsistent input data (files, tables, dimension mismatches).
// The CLI maps this to exit code 1.
class DataError : public std::runtime_error {
  public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration (out-of-range hyperparameters, inconsistent toggles).
// The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace protorefine
