#pragma once

#include <stdexcept>
#include <string>

namespace pathsamp {

/// Invalid configuration or inconsistent inputs detected before computing.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A computation produced non-finite values or failed to converge.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace pathsamp
