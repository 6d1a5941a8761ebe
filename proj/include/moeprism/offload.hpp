#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "moeprism/error.hpp"
#include "moeprism/rng.hpp"

namespace moeprism {

enum class Granularity { monolithic, fine };

inline const char* granularity_name(Granularity g) {
    return g == Granularity::monolithic ? "monolithic" : "fine";
}

inline Granularity parse_granularity(const std::string& name) {
    if (name == "monolithic") return Granularity::monolithic;
    if (name == "fine") return Granularity::fine;
    throw ValidationError("unknown granularity '" + name + "' (expected monolithic|fine)");
}

struct OffloadConfig {
    std::uint32_t n_experts = 0;             // monolithic expert count
    std::uint32_t subexperts_per_expert = 1;  // N
    std::uint64_t expert_bytes = 0;
    std::uint64_t vram_bytes = 0;
    double pcie_bytes_per_s = 0.0;
    double compute_s_per_subexpert = 0.0;
    Granularity granularity = Granularity::fine;
};

inline void validate(const OffloadConfig& cfg) {
    if (cfg.n_experts < 1 || cfg.subexperts_per_expert < 1) {
        throw ValidationError("offload config needs at least one expert and one sub-expert");
    }
    if (cfg.expert_bytes < 1 || cfg.vram_bytes < 1) {
        throw ValidationError("offload config sizes must be positive");
    }
    if (cfg.expert_bytes % cfg.subexperts_per_expert != 0) {
        throw ValidationError("expert_bytes must divide evenly into " +
                              std::to_string(cfg.subexperts_per_expert) + " sub-experts");
    }
    if (!(cfg.pcie_bytes_per_s > 0.0) || !(cfg.compute_s_per_subexpert > 0.0)) {
        throw ValidationError("offload config rates must be positive");
    }
}

// A unit is the transfer/compute granule: a whole expert in monolithic mode,
// one sub-expert in fine mode.
inline std::uint64_t unit_bytes(const OffloadConfig& cfg) {
    return cfg.granularity == Granularity::monolithic ? cfg.expert_bytes
                                                      : cfg.expert_bytes / cfg.subexperts_per_expert;
}

inline std::uint64_t total_units(const OffloadConfig& cfg) {
    const std::uint64_t units = cfg.n_experts;
    return cfg.granularity == Granularity::monolithic ? units
                                                      : units * cfg.subexperts_per_expert;
}

inline std::uint64_t cache_capacity_units(const OffloadConfig& cfg) {
    return cfg.vram_bytes / unit_bytes(cfg);
}

// Fraction of routed units resident under the VRAM budget; finer units pack
// fragments that a whole expert cannot use.
inline double capacity_residency(const OffloadConfig& cfg) {
    validate(cfg);
    const std::uint64_t total = total_units(cfg);
    const std::uint64_t resident = std::min(cache_capacity_units(cfg), total);
    return static_cast<double>(resident) / static_cast<double>(total);
}

namespace detail {

// ceil with a guard against values that land a hair above an integer from
// binary rounding (e.g. 4.2 * 4).
inline std::uint64_t robust_ceil(double v) {
    const double rounded = std::round(v);
    if (std::fabs(v - rounded) < 1e-9 * std::max(1.0, std::fabs(v))) {
        return static_cast<std::uint64_t>(rounded);
    }
    return static_cast<std::uint64_t>(std::ceil(v));
}

}  // namespace detail

// Units needed to cover a fractional expert demand: whole experts quantize
// up at expert granularity, sub-experts at 1/N granularity.
inline std::uint64_t required_units(double k_equiv, const OffloadConfig& cfg) {
    if (!(k_equiv > 0.0)) throw ValidationError("k_equiv must be positive");
    if (cfg.granularity == Granularity::monolithic) {
        return detail::robust_ceil(k_equiv);
    }
    return detail::robust_ceil(k_equiv * static_cast<double>(cfg.subexperts_per_expert));
}

// Per generation step, the set of required unit ids plus the fractional
// expert demand the set was sized for.
struct RoutingTrace {
    Granularity granularity = Granularity::fine;
    std::uint64_t n_units = 0;
    std::vector<std::vector<std::uint32_t>> steps;  // each ascending, non-empty
    std::vector<double> k_equiv;                    // per step
};

inline void validate(const RoutingTrace& trace) {
    if (trace.steps.empty()) throw ValidationError("routing trace has no steps");
    if (trace.k_equiv.size() != trace.steps.size()) {
        throw ValidationError("routing trace metadata does not match its step count");
    }
    for (std::size_t t = 0; t < trace.steps.size(); ++t) {
        const auto& step = trace.steps[t];
        if (step.empty()) throw ValidationError("routing trace step " + std::to_string(t) +
                                                " requires no units");
        if (!std::is_sorted(step.begin(), step.end()) ||
            std::adjacent_find(step.begin(), step.end()) != step.end()) {
            throw ValidationError("routing trace steps must be ascending and duplicate-free");
        }
        if (step.back() >= trace.n_units) {
            throw ValidationError("routing trace step " + std::to_string(t) +
                                  " references unit " + std::to_string(step.back()) +
                                  " beyond the " + std::to_string(trace.n_units) + "-unit space");
        }
    }
}

// Markov-style locality: each unit of the previous step is retained
// independently with probability p; replacements are drawn uniformly from
// the units not yet selected for the step.
inline RoutingTrace generate_routing_trace(std::uint64_t steps, double k_equiv, double locality,
                                           const OffloadConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    if (steps < 1) throw ValidationError("trace needs at least one step");
    if (!(locality >= 0.0 && locality <= 1.0)) {
        throw ValidationError("locality must lie in [0, 1]");
    }
    const std::uint64_t units = total_units(cfg);
    const std::uint64_t want = required_units(k_equiv, cfg);
    if (want > units) {
        throw ValidationError("per-step demand of " + std::to_string(want) +
                              " units exceeds the " + std::to_string(units) + " available");
    }

    RoutingTrace trace;
    trace.granularity = cfg.granularity;
    trace.n_units = units;
    trace.steps.reserve(steps);
    trace.k_equiv.assign(steps, k_equiv);

    std::mt19937_64 rng(seed);
    std::unordered_set<std::uint32_t> chosen;
    std::vector<std::uint32_t> prev;
    for (std::uint64_t t = 0; t < steps; ++t) {
        chosen.clear();
        if (t > 0) {
            for (std::uint32_t id : prev) {  // ascending: fixed draw order
                if (uniform01(rng) < locality) chosen.insert(id);
            }
        }
        while (chosen.size() < want) {
            const auto id = static_cast<std::uint32_t>(uniform_index(rng, units));
            chosen.insert(id);
        }
        std::vector<std::uint32_t> step(chosen.begin(), chosen.end());
        std::sort(step.begin(), step.end());
        trace.steps.push_back(step);
        prev = std::move(step);
    }
    return trace;
}

struct StepLatency {
    double io_s = 0.0;
    double compute_s = 0.0;
    double total_s = 0.0;  // io_s + compute_s exactly
    std::uint64_t miss_count = 0;
};

// VRAM cache of units; front of lru_order is the eviction candidate.
struct CacheState {
    std::uint64_t capacity_units = 0;
    std::vector<std::uint32_t> lru_order;  // least recent first
    std::unordered_set<std::uint32_t> resident;
};

inline CacheState make_cache(const OffloadConfig& cfg) {
    validate(cfg);
    CacheState c;
    c.capacity_units = cache_capacity_units(cfg);
    return c;
}

// One generation step: misses pay the PCIe transfer, every requested unit
// pays compute, least-recently-used units outside the request are evicted,
// and the requested set becomes most recent (ascending id within the step).
inline StepLatency cache_step(CacheState& cache, const std::vector<std::uint32_t>& s_req,
                              const OffloadConfig& cfg) {
    if (s_req.empty()) throw ValidationError("cache step requires a non-empty request set");
    if (s_req.size() > cache.capacity_units) {
        throw ValidationError("request set of " + std::to_string(s_req.size()) +
                              " units exceeds the cache capacity of " +
                              std::to_string(cache.capacity_units));
    }
    const std::uint64_t total = total_units(cfg);
    std::unordered_set<std::uint32_t> requested;
    for (std::uint32_t id : s_req) {
        if (id >= total) {
            throw ValidationError("requested unit " + std::to_string(id) + " beyond the " +
                                  std::to_string(total) + "-unit space");
        }
        if (!requested.insert(id).second) {
            throw ValidationError("request set has duplicate unit " + std::to_string(id));
        }
    }

    StepLatency lat;
    for (std::uint32_t id : s_req) {
        if (!cache.resident.contains(id)) ++lat.miss_count;
    }

    // evict LRU units that are not requested until the misses fit
    std::size_t need = cache.resident.size() + lat.miss_count;
    if (need > cache.capacity_units) {
        std::size_t to_evict = need - cache.capacity_units;
        std::erase_if(cache.lru_order, [&](std::uint32_t id) {
            if (to_evict == 0 || requested.contains(id)) return false;
            cache.resident.erase(id);
            --to_evict;
            return true;
        });
    }

    // requested units become most recent, ascending id
    std::erase_if(cache.lru_order, [&](std::uint32_t id) { return requested.contains(id); });
    for (std::uint32_t id : s_req) {
        cache.resident.insert(id);
        cache.lru_order.push_back(id);
    }

    lat.io_s = static_cast<double>(lat.miss_count) * static_cast<double>(unit_bytes(cfg)) /
               cfg.pcie_bytes_per_s;
    const double per_unit_compute =
        cfg.granularity == Granularity::monolithic
            ? cfg.compute_s_per_subexpert * cfg.subexperts_per_expert
            : cfg.compute_s_per_subexpert;
    lat.compute_s = static_cast<double>(s_req.size()) * per_unit_compute;
    lat.total_s = lat.io_s + lat.compute_s;
    return lat;
}

struct OffloadReport {
    double total_s = 0.0;
    double io_s = 0.0;
    double compute_s = 0.0;
    std::vector<StepLatency> step_latencies;
    double hit_ratio = 0.0;
    std::uint64_t total_misses = 0;
    std::uint64_t total_requested = 0;
};

// Fold the cache over the trace from a cold start.
inline OffloadReport run_offload_sim(const RoutingTrace& trace, const OffloadConfig& cfg) {
    validate(cfg);
    validate(trace);
    if (trace.granularity != cfg.granularity || trace.n_units != total_units(cfg)) {
        throw ValidationError("routing trace granularity does not match the offload config");
    }
    CacheState cache = make_cache(cfg);
    OffloadReport report;
    report.step_latencies.reserve(trace.steps.size());
    for (const auto& step : trace.steps) {
        const StepLatency lat = cache_step(cache, step, cfg);
        report.total_s += lat.total_s;
        report.io_s += lat.io_s;
        report.compute_s += lat.compute_s;
        report.total_misses += lat.miss_count;
        report.total_requested += step.size();
        report.step_latencies.push_back(lat);
    }
    report.hit_ratio = 1.0 - static_cast<double>(report.total_misses) /
                                 static_cast<double>(report.total_requested);
    return report;
}

}  // namespace moeprism
