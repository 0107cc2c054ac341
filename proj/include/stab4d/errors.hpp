#pragma once

#include <stdexcept>
#include <string>

namespace stab4d {

// Unusable input: unreadable files, schema violations, inconsistent dimensions.
struct InputError : std::runtime_error {
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure: degenerate geometry, non-finite objectives.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace stab4d
