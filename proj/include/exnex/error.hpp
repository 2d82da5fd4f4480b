#pragma once

#include <stdexcept>

namespace exnex {

// Invalid or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input data such as r > n (CLI exit code 3).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operation called in the wrong trial state, e.g. declaring an MTD early.
class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace exnex
