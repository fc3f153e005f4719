#pragma once

#include <stdexcept>
#include <string>

namespace votelab {

// Bad sizes, unknown methods, missing inputs at setup time.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed values passed to an otherwise valid call.
struct InvalidInput : std::runtime_error {
    explicit InvalidInput(const std::string& what) : std::runtime_error(what) {}
};

// NaN/Inf encountered where finite numbers are required; aborts the run.
struct NumericFault : std::runtime_error {
    explicit NumericFault(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace votelab
