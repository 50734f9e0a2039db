#pragma once

#include <stdexcept>
#include <string>

namespace beeslab {

// Invalid experiment configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A structural invariant failed at runtime (CLI exit code 3): corrupted
// sortedness, mass-conservation failure, population explosion, and the like.
struct InvariantError : std::runtime_error {
    explicit InvariantError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace beeslab
