#pragma once

#include <stdexcept>
#include <string>

namespace pairsurv {

// Invalid user-supplied configuration (flags, config files, hyper-parameters).
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed or unusable input data.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// NaN/Inf produced during a forward pass or loss evaluation.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pairsurv
