#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "moeprism/activation.hpp"
#include "moeprism/error.hpp"
#include "moeprism/partition.hpp"
#include "moeprism/rng.hpp"

namespace moeprism {

struct SolverConfig {
    std::uint32_t n_subexperts = 4;
    std::uint32_t k_deact = 2;  // sub-experts priced as de-activated in the objective
    double t0 = 100.0;
    double alpha = 0.995;
    std::uint64_t iterations = 100000;
    std::uint64_t seed = 0;
};

// k_deact defaults to floor(N/2); always overridable.
inline SolverConfig default_solver_config(std::uint32_t n_subexperts) {
    SolverConfig cfg;
    cfg.n_subexperts = n_subexperts;
    cfg.k_deact = std::max<std::uint32_t>(1, n_subexperts / 2);
    return cfg;
}

inline void validate(const SolverConfig& cfg) {
    if (cfg.n_subexperts < 2) throw ValidationError("solver needs at least 2 sub-experts");
    if (cfg.k_deact < 1 || cfg.k_deact >= cfg.n_subexperts) {
        throw ValidationError("k_deact = " + std::to_string(cfg.k_deact) +
                              " must satisfy 1 <= K < N = " + std::to_string(cfg.n_subexperts));
    }
    if (!(cfg.t0 > 0.0)) throw ValidationError("initial temperature must be positive");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) {
        throw ValidationError("cooling rate must lie in (0, 1)");
    }
}

struct SolveResult {
    Partition partition;
    double cost = 0.0;
    std::vector<std::pair<std::uint64_t, double>> cost_trace;  // (iteration, best so far)
    SolverConfig config;
};

// Most impactful unassigned neuron goes to the non-full sub-expert with the
// lowest cumulative impact; impact is the column L1 norm. Ties (impact or
// load) break toward the lower index.
inline Partition greedy_init(const ActivationMatrix& m, std::uint32_t n_subexperts) {
    validate(m);
    if (n_subexperts < 2) throw ValidationError("greedy init needs at least 2 sub-experts");
    if (m.cols < n_subexperts) {
        throw ValidationError("cannot split " + std::to_string(m.cols) + " neurons into " +
                              std::to_string(n_subexperts) + " sub-experts");
    }

    std::vector<double> impact(m.cols, 0.0);
    for (std::size_t b = 0; b < m.rows; ++b) {
        const float* row = m.data.data() + b * m.cols;
        for (std::size_t c = 0; c < m.cols; ++c) impact[c] += row[c];
    }

    std::vector<std::uint32_t> order(m.cols);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (impact[a] != impact[b]) return impact[a] > impact[b];
        return a < b;
    });

    const std::size_t base = m.cols / n_subexperts;
    const std::size_t extra = m.cols % n_subexperts;
    std::vector<std::size_t> capacity(n_subexperts);
    for (std::uint32_t n = 0; n < n_subexperts; ++n) capacity[n] = base + (n < extra ? 1 : 0);

    Partition p;
    p.n_subexperts = n_subexperts;
    p.assignment.assign(m.cols, 0u);
    std::vector<double> load(n_subexperts, 0.0);
    std::vector<std::size_t> used(n_subexperts, 0);
    for (std::uint32_t c : order) {
        std::uint32_t pick = n_subexperts;
        for (std::uint32_t n = 0; n < n_subexperts; ++n) {
            if (used[n] >= capacity[n]) continue;
            if (pick == n_subexperts || load[n] < load[pick]) pick = n;
        }
        p.assignment[c] = pick;
        load[pick] += impact[c];
        ++used[pick];
    }
    return p;
}

namespace detail {

// Per-row objective contribution: sum of the k smallest sub-expert norms.
inline double row_cost(const double* norms, std::size_t n, std::size_t k, double* scratch) {
    std::copy_n(norms, n, scratch);
    return k_smallest_sum(scratch, n, k);
}

}  // namespace detail

// Balance-preserving label swaps: each iteration proposes exchanging the
// labels of two neurons in different sub-experts. Delta cost is evaluated
// incrementally from the two affected norm columns per row.
inline SolveResult anneal(const ActivationMatrix& m, const Partition& p0,
                          const SolverConfig& cfg) {
    constexpr double temp_floor = 1e-9;  // below it only improving moves are taken
    validate(cfg);
    if (p0.n_subexperts != cfg.n_subexperts) {
        throw ValidationError("initial partition has N=" + std::to_string(p0.n_subexperts) +
                              " but the config says N=" + std::to_string(cfg.n_subexperts));
    }

    std::vector<double> norms = subexpert_norms(m, p0);  // validates m and p0
    const std::size_t n = cfg.n_subexperts;
    const std::size_t k = cfg.k_deact;
    const std::size_t cols = m.cols;

    std::vector<double> scratch(n);
    std::vector<double> row_costs(m.rows);
    double cost = 0.0;
    for (std::size_t b = 0; b < m.rows; ++b) {
        row_costs[b] = detail::row_cost(norms.data() + b * n, n, k, scratch.data());
        cost += row_costs[b];
    }

    Partition current = p0;
    Partition best = p0;
    double best_cost = cost;

    SolveResult result;
    result.config = cfg;
    result.cost_trace.emplace_back(0, best_cost);
    const std::uint64_t stride = std::max<std::uint64_t>(1, cfg.iterations / 256);

    std::mt19937_64 rng(cfg.seed);
    double temp = cfg.t0;
    std::vector<double> new_row_costs(m.rows);
    std::uint64_t accepts = 0;

    for (std::uint64_t it = 1; it <= cfg.iterations; ++it) {
        const std::uint32_t i = static_cast<std::uint32_t>(uniform_index(rng, cols));
        std::uint32_t j;
        do {
            j = static_cast<std::uint32_t>(uniform_index(rng, cols));
        } while (current.assignment[j] == current.assignment[i]);
        const std::uint32_t u = current.assignment[i];
        const std::uint32_t v = current.assignment[j];

        double delta = 0.0;
        for (std::size_t b = 0; b < m.rows; ++b) {
            const float* mrow = m.data.data() + b * cols;
            const double shift = static_cast<double>(mrow[j]) - static_cast<double>(mrow[i]);
            double* lrow = norms.data() + b * n;
            std::copy_n(lrow, n, scratch.data());
            scratch[u] += shift;
            scratch[v] -= shift;
            const double updated = detail::k_smallest_sum(scratch.data(), n, k);
            new_row_costs[b] = updated;
            delta += updated - row_costs[b];
        }

        bool accept = delta <= 0.0;
        if (!accept && temp >= temp_floor) {
            accept = uniform01(rng) < std::exp(-delta / temp);
        }
        if (accept) {
            for (std::size_t b = 0; b < m.rows; ++b) {
                const float* mrow = m.data.data() + b * cols;
                const double shift = static_cast<double>(mrow[j]) - static_cast<double>(mrow[i]);
                double* lrow = norms.data() + b * n;
                lrow[u] += shift;
                lrow[v] -= shift;
                row_costs[b] = new_row_costs[b];
            }
            std::swap(current.assignment[i], current.assignment[j]);
            cost += delta;
            ++accepts;
            if (accepts % 4096 == 0) {
                cost = std::accumulate(row_costs.begin(), row_costs.end(), 0.0);
            }
#ifndef NDEBUG
            if (accepts % 1024 == 0) {
                const double scratch_cost = partition_cost(m, current, cfg.k_deact);
                assert(std::fabs(scratch_cost - cost) <=
                       1e-6 * std::max(1.0, std::fabs(scratch_cost)));
            }
#endif
            if (cost < best_cost) {
                best_cost = cost;
                best = current;
            }
        }
        temp *= cfg.alpha;
        if (it % stride == 0 || it == cfg.iterations) {
            result.cost_trace.emplace_back(it, best_cost);
        }
    }

    result.partition = std::move(best);
    result.cost = partition_cost(m, result.partition, cfg.k_deact);
    return result;
}

// Number of balanced set partitions of n_neurons into n_subexperts groups
// (label permutations not counted). Computed in doubles; used as the
// feasibility guard for exhaustive search.
inline double balanced_partition_count(std::size_t n_neurons, std::uint32_t n_subexperts) {
    const std::size_t base = n_neurons / n_subexperts;
    const std::size_t extra = n_neurons % n_subexperts;
    double count = 1.0;
    std::size_t remaining = n_neurons;
    for (std::uint32_t g = 0; g < n_subexperts; ++g) {
        const std::size_t size = base + (g < extra ? 1 : 0);
        // binomial(remaining, size)
        double binom = 1.0;
        for (std::size_t i = 0; i < size; ++i) {
            binom = binom * static_cast<double>(remaining - i) / static_cast<double>(i + 1);
        }
        count *= binom;
        remaining -= size;
    }
    auto factorial = [](std::size_t x) {
        double f = 1.0;
        for (std::size_t i = 2; i <= x; ++i) f *= static_cast<double>(i);
        return f;
    };
    if (extra == 0) {
        count /= factorial(n_subexperts);
    } else {
        count /= factorial(extra) * factorial(n_subexperts - extra);
    }
    return count;
}

namespace detail {

// First-occurrence canonical labeling: the lexicographically smallest
// assignment vector among all sub-expert relabelings.
inline std::vector<std::uint32_t> canonical_labels(const std::vector<std::uint32_t>& assignment,
                                                   std::uint32_t n_subexperts) {
    std::vector<std::uint32_t> remap(n_subexperts, n_subexperts);
    std::vector<std::uint32_t> out(assignment.size());
    std::uint32_t next = 0;
    for (std::size_t c = 0; c < assignment.size(); ++c) {
        std::uint32_t& slot = remap[assignment[c]];
        if (slot == n_subexperts) slot = next++;
        out[c] = slot;
    }
    return out;
}

}  // namespace detail

// Exact minimum over every balanced partition. Guarded: refuses instances
// with more than 10^6 balanced partitions. Ties resolve to the
// lexicographically smallest canonical assignment vector.
inline SolveResult brute_force_optimal(const ActivationMatrix& m, std::uint32_t n_subexperts,
                                       std::uint32_t k_deact) {
    validate(m);
    if (n_subexperts < 2) throw ValidationError("need at least 2 sub-experts");
    if (k_deact < 1 || k_deact >= n_subexperts) {
        throw ValidationError("k_deact = " + std::to_string(k_deact) +
                              " must satisfy 1 <= K < N = " + std::to_string(n_subexperts));
    }
    if (m.cols < n_subexperts) {
        throw ValidationError("cannot split " + std::to_string(m.cols) + " neurons into " +
                              std::to_string(n_subexperts) + " sub-experts");
    }
    const double count = balanced_partition_count(m.cols, n_subexperts);
    if (count > 1e6) {
        throw ValidationError("instance has " + std::to_string(count) +
                              " balanced partitions, above the 1e6 exhaustive-search guard");
    }

    const std::size_t base = m.cols / n_subexperts;
    const std::size_t extra = m.cols % n_subexperts;
    std::vector<std::size_t> capacity(n_subexperts);
    for (std::uint32_t g = 0; g < n_subexperts; ++g) capacity[g] = base + (g < extra ? 1 : 0);

    Partition trial;
    trial.n_subexperts = n_subexperts;
    trial.assignment.assign(m.cols, 0u);
    std::vector<std::size_t> used(n_subexperts, 0);

    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<std::uint32_t> best_assignment;

    // Depth-first over assignment vectors; among empty groups only the first
    // of each capacity class is eligible, so every set partition appears once.
    auto recurse = [&](auto&& self, std::size_t c) -> void {
        if (c == m.cols) {
            const double cost = partition_cost(m, trial, k_deact);
            if (cost < best_cost) {
                best_cost = cost;
                best_assignment = detail::canonical_labels(trial.assignment, n_subexperts);
            } else if (cost == best_cost) {
                auto canon = detail::canonical_labels(trial.assignment, n_subexperts);
                if (canon < best_assignment) best_assignment = std::move(canon);
            }
            return;
        }
        bool seen_empty_large = false;
        bool seen_empty_small = false;
        for (std::uint32_t g = 0; g < n_subexperts; ++g) {
            if (used[g] >= capacity[g]) continue;
            if (used[g] == 0) {
                bool& seen = capacity[g] == base ? seen_empty_small : seen_empty_large;
                if (seen) continue;
                seen = true;
            }
            trial.assignment[c] = g;
            ++used[g];
            self(self, c + 1);
            --used[g];
        }
    };
    recurse(recurse, 0);

    SolveResult result;
    result.partition.n_subexperts = n_subexperts;
    result.partition.assignment = std::move(best_assignment);
    result.cost = best_cost;
    result.cost_trace.emplace_back(0, best_cost);
    result.config = default_solver_config(n_subexperts);
    result.config.k_deact = k_deact;
    result.config.iterations = 0;
    return result;
}

// Two-phase solve: greedy initialization refined by simulated annealing.
inline SolveResult solve(const ActivationMatrix& m, const SolverConfig& cfg) {
    validate(cfg);
    const Partition p0 = greedy_init(m, cfg.n_subexperts);
    return anneal(m, p0, cfg);
}

}  // namespace moeprism
