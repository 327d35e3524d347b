#pragma once

#include <stdexcept>
#include <string>

namespace xcam {

// Shape/dimension mismatch between tensors or parameter records.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally invalid configuration (bad divisibility, out-of-range knobs).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid data fed to the pipeline (bad labels, missing files, empty splits).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure at runtime (NaN loss during training).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace xcam
