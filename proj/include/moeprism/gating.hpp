#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "moeprism/activation.hpp"
#include "moeprism/error.hpp"
#include "moeprism/partition.hpp"

namespace moeprism {

// Gate neurons: per sub-expert, the co-activation centroids whose
// activations proxy the whole group's norm.
struct GateSet {
    std::uint32_t n_subexperts = 0;
    std::uint32_t r = 0;                                  // requested gate neurons per sub-expert
    std::vector<std::vector<std::uint32_t>> gate_neurons;  // per sub-expert, ascending indices
};

constexpr std::uint32_t default_gate_neuron_count = 4;

// Matches the profiling convention of masking the top 3/4 of neurons.
inline std::size_t default_binarize_count(std::size_t cols) {
    const auto k = static_cast<std::size_t>(std::lround(0.75 * static_cast<double>(cols)));
    return std::clamp<std::size_t>(k, 1, cols);
}

inline void validate(const GateSet& g) {
    if (g.n_subexperts < 1 || g.gate_neurons.size() != g.n_subexperts || g.r < 1) {
        throw ValidationError("gate set shape is inconsistent");
    }
    for (const auto& list : g.gate_neurons) {
        if (list.empty()) throw ValidationError("every sub-expert needs at least one gate neuron");
        if (!std::is_sorted(list.begin(), list.end())) {
            throw ValidationError("gate neuron lists must be ascending");
        }
    }
}

// Cumulative co-activation of each member with its peers; the diagonal is
// excluded so self-counts cannot dominate.
inline std::vector<std::uint64_t> centrality_scores(const CoActivationMatrix& c_co,
                                                    std::span<const std::uint32_t> members) {
    std::vector<std::uint64_t> scores(members.size(), 0);
    for (std::size_t a = 0; a < members.size(); ++a) {
        const std::uint32_t i = members[a];
        if (i >= c_co.dim) {
            throw ValidationError("member index " + std::to_string(i) +
                                  " out of range for co-activation dim " +
                                  std::to_string(c_co.dim));
        }
        std::uint64_t sum = 0;
        for (std::uint32_t j : members) {
            if (j == i) continue;
            if (j >= c_co.dim) {
                throw ValidationError("member index " + std::to_string(j) +
                                      " out of range for co-activation dim " +
                                      std::to_string(c_co.dim));
            }
            sum += c_co.at(i, j);
        }
        scores[a] = sum;
    }
    return scores;
}

// Top-r centrality members per sub-expert (all members when the group is
// smaller than r); ties break toward the lower neuron index.
inline GateSet select_gate_neurons(const CoActivationMatrix& c_co, const Partition& p,
                                   std::uint32_t r) {
    validate(p);
    if (r < 1) throw ValidationError("gate neuron count r must be >= 1");
    if (p.assignment.size() != c_co.dim) {
        throw ValidationError("partition covers " + std::to_string(p.assignment.size()) +
                              " neurons but the co-activation matrix has dim " +
                              std::to_string(c_co.dim));
    }
    GateSet g;
    g.n_subexperts = p.n_subexperts;
    g.r = r;
    g.gate_neurons.resize(p.n_subexperts);
    const auto members = subexpert_members(p);
    for (std::uint32_t n = 0; n < p.n_subexperts; ++n) {
        const auto& group = members[n];
        const auto scores = centrality_scores(c_co, group);
        std::vector<std::size_t> order(group.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return group[a] < group[b];
        });
        const std::size_t take = std::min<std::size_t>(r, group.size());
        auto& picked = g.gate_neurons[n];
        picked.reserve(take);
        for (std::size_t i = 0; i < take; ++i) picked.push_back(group[order[i]]);
        std::sort(picked.begin(), picked.end());
    }
    return g;
}

// Mean activation magnitude over each sub-expert's gate neurons.
inline std::vector<double> proxy_scores(std::span<const float> token_activations,
                                        const GateSet& gates) {
    validate(gates);
    std::vector<double> scores(gates.n_subexperts, 0.0);
    for (std::uint32_t n = 0; n < gates.n_subexperts; ++n) {
        const auto& list = gates.gate_neurons[n];
        double sum = 0.0;
        for (std::uint32_t g : list) {
            if (g >= token_activations.size()) {
                throw ValidationError("gate neuron " + std::to_string(g) +
                                      " out of range for activation vector of length " +
                                      std::to_string(token_activations.size()));
            }
            sum += token_activations[g];
        }
        scores[n] = sum / static_cast<double>(list.size());
    }
    return scores;
}

// Indices of the k_active largest scores; ties break toward the lower index.
// Result is ascending and has exactly k_active entries.
inline std::vector<std::uint32_t> select_topk_subexperts(std::span<const double> scores,
                                                         std::uint32_t k_active) {
    if (k_active < 1 || k_active > scores.size()) {
        throw ValidationError("k_active = " + std::to_string(k_active) +
                              " out of range [1, " + std::to_string(scores.size()) + "]");
    }
    std::vector<std::uint32_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0u);
    std::nth_element(order.begin(), order.begin() + (k_active - 1), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) {
                         if (scores[a] != scores[b]) return scores[a] > scores[b];
                         return a < b;
                     });
    order.resize(k_active);
    std::sort(order.begin(), order.end());
    return order;
}

// Mean top-k recall of the proxy selection against selection on the true
// sub-expert norms, over all tokens.
inline double gating_fidelity(const ActivationMatrix& m, const Partition& p,
                              const GateSet& gates, std::uint32_t k_active) {
    validate(gates);
    if (gates.n_subexperts != p.n_subexperts) {
        throw ValidationError("gate set and partition disagree on the sub-expert count");
    }
    const std::vector<double> norms = subexpert_norms(m, p);
    const std::size_t n = p.n_subexperts;
    double total = 0.0;
    std::vector<double> true_row(n);
    for (std::size_t b = 0; b < m.rows; ++b) {
        const std::span<const float> row(m.data.data() + b * m.cols, m.cols);
        const auto proxy = proxy_scores(row, gates);
        std::copy_n(norms.data() + b * n, n, true_row.data());
        const auto picked = select_topk_subexperts(proxy, k_active);
        const auto truth = select_topk_subexperts(true_row, k_active);
        std::size_t hits = 0;
        std::size_t ti = 0;
        for (std::uint32_t s : picked) {  // both ascending
            while (ti < truth.size() && truth[ti] < s) ++ti;
            if (ti < truth.size() && truth[ti] == s) ++hits;
        }
        total += static_cast<double>(hits) / static_cast<double>(k_active);
    }
    return total / static_cast<double>(m.rows);
}

}  // namespace moeprism
