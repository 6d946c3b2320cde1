#pragma once

#include <stdexcept>
#include <string>

namespace umesh {

// Invalid user input: bad config values, inconsistent specs, precondition violations.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Corrupt or mismatched on-disk data (magic, version, digest, truncation).
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// A numerical procedure failed to converge within its budget.
class ConvergenceError : public std::runtime_error {
public:
    explicit ConvergenceError(const std::string& msg, double residual = 0.0)
        : std::runtime_error(msg), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

}  // namespace umesh
