#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "moeprism/activation.hpp"
#include "moeprism/error.hpp"

namespace moeprism {

// Balanced assignment of neuron indices to sub-experts. Labels are 0-based;
// sub-expert sizes differ by at most one.
struct Partition {
    std::uint32_t n_subexperts = 0;
    std::vector<std::uint32_t> assignment;  // neuron index -> sub-expert label

    std::size_t n_neurons() const { return assignment.size(); }
};

inline std::vector<std::size_t> subexpert_sizes(const Partition& p) {
    std::vector<std::size_t> sizes(p.n_subexperts, 0);
    for (std::uint32_t label : p.assignment) {
        if (label >= p.n_subexperts) {
            throw ValidationError("partition label " + std::to_string(label) +
                                  " out of range for N=" + std::to_string(p.n_subexperts));
        }
        ++sizes[label];
    }
    return sizes;
}

inline void validate(const Partition& p) {
    if (p.n_subexperts < 1) throw ValidationError("partition needs at least one sub-expert");
    if (p.assignment.size() < p.n_subexperts) {
        throw ValidationError("partition needs at least as many neurons as sub-experts");
    }
    const auto sizes = subexpert_sizes(p);
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    if (*lo == 0) throw ValidationError("every sub-expert must be non-empty");
    if (*hi - *lo > 1) {
        throw ValidationError("partition is not balanced: sizes range from " +
                              std::to_string(*lo) + " to " + std::to_string(*hi));
    }
}

// Member neuron indices per sub-expert, each list ascending.
inline std::vector<std::vector<std::uint32_t>> subexpert_members(const Partition& p) {
    std::vector<std::vector<std::uint32_t>> members(p.n_subexperts);
    for (std::uint32_t c = 0; c < p.assignment.size(); ++c) {
        members[p.assignment[c]].push_back(c);
    }
    return members;
}

// Contiguous blocks: neurons 0..cap_0-1 -> 0, the next cap_1 -> 1, ...
// The first (C mod N) sub-experts take the extra neuron.
inline Partition contiguous_partition(std::size_t n_neurons, std::uint32_t n_subexperts) {
    if (n_subexperts < 1 || n_neurons < n_subexperts) {
        throw ValidationError("cannot split " + std::to_string(n_neurons) + " neurons into " +
                              std::to_string(n_subexperts) + " sub-experts");
    }
    Partition p;
    p.n_subexperts = n_subexperts;
    p.assignment.reserve(n_neurons);
    const std::size_t base = n_neurons / n_subexperts;
    const std::size_t extra = n_neurons % n_subexperts;
    for (std::uint32_t n = 0; n < n_subexperts; ++n) {
        const std::size_t cap = base + (n < extra ? 1 : 0);
        p.assignment.insert(p.assignment.end(), cap, n);
    }
    return p;
}

// L[b][n] = sum of row-b magnitudes over sub-expert n's neurons.
// Returned row-major, rows x n_subexperts.
inline std::vector<double> subexpert_norms(const ActivationMatrix& m, const Partition& p) {
    validate(m);
    validate(p);
    if (p.assignment.size() != m.cols) {
        throw ValidationError("partition covers " + std::to_string(p.assignment.size()) +
                              " neurons but the matrix has " + std::to_string(m.cols) +
                              " columns");
    }
    std::vector<double> norms(m.rows * p.n_subexperts, 0.0);
    for (std::size_t b = 0; b < m.rows; ++b) {
        double* out = norms.data() + b * p.n_subexperts;
        const float* row = m.data.data() + b * m.cols;
        for (std::size_t c = 0; c < m.cols; ++c) {
            out[p.assignment[c]] += row[c];
        }
    }
    return norms;
}

namespace detail {

// Sum of the k smallest among values[0..n); values is scratch and gets sorted.
inline double k_smallest_sum(double* values, std::size_t n, std::size_t k) {
    std::sort(values, values + n);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += values[i];
    return sum;
}

}  // namespace detail

// Objective value: total activation mass falling into the k_deact weakest
// sub-experts, summed over all tokens.
inline double partition_cost(const ActivationMatrix& m, const Partition& p,
                             std::uint32_t k_deact) {
    if (k_deact < 1 || k_deact >= p.n_subexperts) {
        throw ValidationError("k_deact = " + std::to_string(k_deact) +
                              " must satisfy 1 <= k < N = " + std::to_string(p.n_subexperts));
    }
    const std::vector<double> norms = subexpert_norms(m, p);
    const std::size_t n = p.n_subexperts;
    std::vector<double> row(n);
    double cost = 0.0;
    for (std::size_t b = 0; b < m.rows; ++b) {
        std::copy_n(norms.data() + b * n, n, row.data());
        cost += detail::k_smallest_sum(row.data(), n, k_deact);
    }
    return cost;
}

}  // namespace moeprism
