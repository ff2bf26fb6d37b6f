#pragma once

#include <stdexcept>

namespace empo {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when training or evaluation produces NaN/Inf.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnsupportedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace empo
