#pragma once

#include <stdexcept>
#include <string>

namespace moeprism {

// Domain / validation failure: the inputs violate a contract. CLI exit code 1.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem / stream failure: the world is broken, not the data. CLI exit code 2.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace moeprism
