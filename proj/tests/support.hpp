#pragma once

// Shared fixtures and independent reference implementations for the test
// suites. Anything here that mirrors a library operation is written from
// the definition, not by calling the code under test.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "moeprism/activation.hpp"
#include "moeprism/expert.hpp"
#include "moeprism/partition.hpp"
#include "moeprism/rng.hpp"

namespace testsupport {

namespace fs = std::filesystem;
using moeprism::ActivationMatrix;
using moeprism::BinaryActivation;
using moeprism::Partition;
using moeprism::ToyExpert;

// Self-deleting scratch directory under the system temp root.
struct TempDir {
    fs::path path;

    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() /
               ("moeprism_test_" + tag + "_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    fs::path file(const std::string& name) const { return path / name; }
};

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

inline void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
}

inline ActivationMatrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                                      float scale = 1.0f) {
    std::mt19937_64 rng(seed);
    ActivationMatrix m = moeprism::make_activation_matrix(rows, cols);
    for (auto& v : m.data) {
        v = static_cast<float>(moeprism::uniform01(rng)) * scale;
    }
    return m;
}

inline ToyExpert random_expert(std::size_t d_model, std::size_t d_ff, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ToyExpert e;
    e.d_model = d_model;
    e.d_ff = d_ff;
    auto fill = [&](std::vector<float>& w, std::size_t n) {
        w.resize(n);
        for (auto& v : w) v = static_cast<float>(moeprism::uniform01(rng) * 2.0 - 1.0);
    };
    fill(e.w_gate, d_model * d_ff);
    fill(e.w_up, d_model * d_ff);
    fill(e.w_down, d_ff * d_model);
    return e;
}

// Balanced partition from a seeded shuffle dealt round-robin.
inline Partition random_balanced_partition(std::size_t n_neurons, std::uint32_t n_subexperts,
                                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::uint32_t> order(n_neurons);
    std::iota(order.begin(), order.end(), 0u);
    for (std::size_t i = n_neurons - 1; i > 0; --i) {
        const std::size_t j = moeprism::uniform_index(rng, i + 1);
        std::swap(order[i], order[j]);
    }
    Partition p;
    p.n_subexperts = n_subexperts;
    p.assignment.assign(n_neurons, 0u);
    for (std::size_t i = 0; i < n_neurons; ++i) {
        p.assignment[order[i]] = static_cast<std::uint32_t>(i % n_subexperts);
    }
    return p;
}

// Each token lights one sub-expert's neurons at 1.0 and everything else with
// small noise; the partition that planted the clusters is returned too.
struct PlantedCluster {
    ActivationMatrix matrix;
    Partition partition;
};

inline PlantedCluster planted_cluster(std::size_t tokens, std::uint32_t n_subexperts,
                                      std::size_t group_size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t cols = static_cast<std::size_t>(n_subexperts) * group_size;
    PlantedCluster out;
    out.partition = moeprism::contiguous_partition(cols, n_subexperts);
    out.matrix = moeprism::make_activation_matrix(tokens, cols);
    for (std::size_t b = 0; b < tokens; ++b) {
        const std::uint32_t hot = static_cast<std::uint32_t>(b % n_subexperts);
        for (std::size_t c = 0; c < cols; ++c) {
            const bool in_hot = out.partition.assignment[c] == hot;
            out.matrix.at(b, c) = in_hot
                                      ? 1.0f
                                      : static_cast<float>(moeprism::uniform01(rng) * 0.01);
        }
    }
    return out;
}

// Random 0/1 mask with exactly k ones per row, built without binarize_topk.
inline BinaryActivation random_binary(std::size_t rows, std::size_t cols, std::size_t k,
                                      std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    BinaryActivation bin;
    bin.rows = rows;
    bin.cols = cols;
    bin.k_a = k;
    bin.bits.assign(rows * cols, 0);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t placed = 0;
        while (placed < k) {
            const std::size_t c = moeprism::uniform_index(rng, cols);
            if (!bin.bits[r * cols + c]) {
                bin.bits[r * cols + c] = 1;
                ++placed;
            }
        }
    }
    return bin;
}

// O(B*C^2) pair counting straight from the definition of B^T B.
inline std::vector<std::uint32_t> coactivation_reference(const BinaryActivation& bin) {
    std::vector<std::uint32_t> counts(bin.cols * bin.cols, 0);
    for (std::size_t i = 0; i < bin.cols; ++i) {
        for (std::size_t j = 0; j < bin.cols; ++j) {
            std::uint32_t n = 0;
            for (std::size_t r = 0; r < bin.rows; ++r) {
                if (bin.at(r, i) && bin.at(r, j)) ++n;
            }
            counts[i * bin.cols + j] = n;
        }
    }
    return counts;
}

// Reference LRU over unit requests: returns the miss count per step.
// Written against the same contract (misses inserted, LRU-but-not-requested
// evicted, requested units refreshed in ascending order) with a plain list.
inline std::vector<std::uint64_t> lru_reference(
    const std::vector<std::vector<std::uint32_t>>& steps, std::uint64_t capacity) {
    std::vector<std::uint32_t> order;  // least recent first
    std::vector<std::uint64_t> misses;
    for (const auto& req : steps) {
        std::uint64_t miss = 0;
        for (std::uint32_t id : req) {
            if (std::find(order.begin(), order.end(), id) == order.end()) ++miss;
        }
        // evict least-recently-used units not requested now
        std::uint64_t have = order.size() + miss;
        for (std::size_t i = 0; i < order.size() && have > capacity;) {
            if (std::find(req.begin(), req.end(), order[i]) == req.end()) {
                order.erase(order.begin() + static_cast<std::ptrdiff_t>(i));
                --have;
            } else {
                ++i;
            }
        }
        for (std::uint32_t id : req) {
            auto it = std::find(order.begin(), order.end(), id);
            if (it != order.end()) order.erase(it);
        }
        for (std::uint32_t id : req) order.push_back(id);
        misses.push_back(miss);
    }
    return misses;
}

}  // namespace testsupport
