#pragma once

#include <stdexcept>
#include <string>

namespace nerfba {

// Error taxonomy used across the library. The CLI maps these to exit codes:
// ValidationError -> 1, NanAbort -> 2, ParseError/IoError -> 3.

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient during optimization. Never clipped silently.
struct NanAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace nerfba
