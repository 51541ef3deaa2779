#pragma once

#include <string>

namespace acceptance {

struct Outcome {
    bool pass = false;
    std::string detail;
};

/// Gradient checks and exact layer properties, run in the 64-bit build.
Outcome numerical_core();

}  // namespace acceptance
