#pragma once

#include <stdexcept>
#include <string>

namespace lifelong {

// Invalid argument to an operation: shape mismatch, zero-norm vector,
// unknown task id, malformed entry.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Invalid configuration value or experiment setup. Maps to exit code 2.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Non-finite loss or gradient. Maps to exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Broken internal precondition (e.g. backward without a cached forward).
class InternalError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw DomainError(msg);
}

inline void require_config(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

}  // namespace lifelong
