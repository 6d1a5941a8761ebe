#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace moeprism {

// All randomized code in the library draws through these two helpers so that
// a seed fully determines the output stream on every platform. The standard
// distributions are deliberately avoided: their mapping from generator bits
// to values is implementation-defined.

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Unbiased uniform integer in [0, n). n must be > 0.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t limit = max - max % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

}  // namespace moeprism
