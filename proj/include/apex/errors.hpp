#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace apex {

class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised when a formula is evaluated at a time where it divides by zero
// (t = 0 for score maps, t = 1 for velocity maps and omega).
class SingularTimeError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class NumericFailure : public std::runtime_error {
public:
    NumericFailure(const std::string& what, long long index = -1)
        : std::runtime_error(what), index_(index) {}

    // Step / coordinate where the failure was detected, or -1.
    long long index() const noexcept { return index_; }

private:
    long long index_;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& key, const std::string& what)
        : std::runtime_error("config key '" + key + "': " + what), key_(key) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

}  // namespace apex
