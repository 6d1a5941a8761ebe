#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "moeprism/error.hpp"

namespace moeprism {

// Synthetic stand-in for a pre-deployment benchmark: batch latency linear in
// batch size, with a per-request term that grows with the active sub-expert
// count.
struct AnalyticPerf {
    double fixed_s = 0.01;            // per-batch overhead
    double per_token_s = 0.001;       // per request
    double per_token_per_k_s = 0.0005;  // per request per active sub-expert
};

inline void validate(const AnalyticPerf& p) {
    if (!(p.fixed_s > 0.0) || p.per_token_s < 0.0 || p.per_token_per_k_s < 0.0 ||
        !std::isfinite(p.fixed_s) || !std::isfinite(p.per_token_s) ||
        !std::isfinite(p.per_token_per_k_s)) {
        throw ValidationError("analytic perf model needs fixed_s > 0 and non-negative slopes");
    }
}

// Calibrated latency grid over (batch size, active sub-experts), bilinearly
// interpolated inside and clamped at the edges.
struct PerfTable {
    std::vector<std::uint32_t> batch_axis;  // sorted distinct
    std::vector<std::uint32_t> k_axis;      // sorted distinct
    std::vector<double> latencies;          // [batch index * k_axis.size() + k index]

    double at(std::size_t bi, std::size_t ki) const { return latencies[bi * k_axis.size() + ki]; }
};

inline void validate(const PerfTable& t) {
    if (t.batch_axis.empty() || t.k_axis.empty()) throw ValidationError("perf table is empty");
    if (t.latencies.size() != t.batch_axis.size() * t.k_axis.size()) {
        throw ValidationError("perf table grid is incomplete");
    }
    if (!std::is_sorted(t.batch_axis.begin(), t.batch_axis.end()) ||
        std::adjacent_find(t.batch_axis.begin(), t.batch_axis.end()) != t.batch_axis.end() ||
        !std::is_sorted(t.k_axis.begin(), t.k_axis.end()) ||
        std::adjacent_find(t.k_axis.begin(), t.k_axis.end()) != t.k_axis.end()) {
        throw ValidationError("perf table axes must be sorted and distinct");
    }
    for (std::size_t bi = 0; bi < t.batch_axis.size(); ++bi) {
        for (std::size_t ki = 0; ki < t.k_axis.size(); ++ki) {
            const double v = t.at(bi, ki);
            if (!(v > 0.0) || !std::isfinite(v)) {
                throw ValidationError("perf table cell (" + std::to_string(t.batch_axis[bi]) +
                                      ", " + std::to_string(t.k_axis[ki]) +
                                      ") must hold a positive latency");
            }
            if (bi > 0 && v < t.at(bi - 1, ki)) {
                throw ValidationError("perf table latency decreases along the batch axis at (" +
                                      std::to_string(t.batch_axis[bi]) + ", " +
                                      std::to_string(t.k_axis[ki]) + ")");
            }
            if (ki > 0 && v < t.at(bi, ki - 1)) {
                throw ValidationError("perf table latency decreases along the k axis at (" +
                                      std::to_string(t.batch_axis[bi]) + ", " +
                                      std::to_string(t.k_axis[ki]) + ")");
            }
        }
    }
}

using PerfModel = std::variant<AnalyticPerf, PerfTable>;

inline double eval_cost(const AnalyticPerf& p, std::uint64_t batch, std::uint32_t k_active) {
    if (batch < 1 || k_active < 1) throw ValidationError("eval_cost needs batch >= 1 and k >= 1");
    return p.fixed_s + static_cast<double>(batch) *
                           (p.per_token_s + static_cast<double>(k_active) * p.per_token_per_k_s);
}

namespace detail {

// Clamped 1-D coordinate: cell index and interpolation weight in [0, 1].
inline std::pair<std::size_t, double> axis_locate(const std::vector<std::uint32_t>& axis,
                                                  double v) {
    if (v <= axis.front()) return {0, 0.0};
    if (v >= axis.back()) return {axis.size() - 1, 0.0};
    std::size_t hi = 1;
    while (axis[hi] < v) ++hi;
    const std::size_t lo = hi - 1;
    if (v == axis[hi]) return {hi, 0.0};
    const double t = (v - axis[lo]) / (static_cast<double>(axis[hi]) - axis[lo]);
    return {lo, t};
}

}  // namespace detail

inline double eval_cost(const PerfTable& t, std::uint64_t batch, std::uint32_t k_active) {
    if (batch < 1 || k_active < 1) throw ValidationError("eval_cost needs batch >= 1 and k >= 1");
    if (t.batch_axis.empty() || t.k_axis.empty()) throw ValidationError("perf table is empty");
    const auto [bi, bt] = detail::axis_locate(t.batch_axis, static_cast<double>(batch));
    const auto [ki, kt] = detail::axis_locate(t.k_axis, static_cast<double>(k_active));
    const std::size_t bj = bt > 0.0 ? bi + 1 : bi;
    const std::size_t kj = kt > 0.0 ? ki + 1 : ki;
    const double c00 = t.at(bi, ki);
    const double c01 = t.at(bi, kj);
    const double c10 = t.at(bj, ki);
    const double c11 = t.at(bj, kj);
    const double low = (1.0 - kt) * c00 + kt * c01;
    const double high = (1.0 - kt) * c10 + kt * c11;
    return (1.0 - bt) * low + bt * high;
}

inline double eval_cost(const PerfModel& model, std::uint64_t batch, std::uint32_t k_active) {
    return std::visit([&](const auto& m) { return eval_cost(m, batch, k_active); }, model);
}

// CSV with header "batch,k,latency_s", one row per grid cell. Rejects
// incomplete grids, non-positive latencies and monotonicity violations,
// naming the offending cell.
inline PerfTable load_perf_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open perf table " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("perf table is empty: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "batch,k,latency_s") {
        throw ValidationError("perf table must start with header 'batch,k,latency_s', got '" +
                              line + "'");
    }

    struct Cell {
        std::uint32_t batch;
        std::uint32_t k;
        double latency;
    };
    std::vector<Cell> cells;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream row(line);
        Cell cell{};
        char c1 = 0, c2 = 0;
        if (!(row >> cell.batch >> c1 >> cell.k >> c2 >> cell.latency) || c1 != ',' || c2 != ',') {
            throw ValidationError("perf table line " + std::to_string(lineno) +
                                  " is not 'batch,k,latency_s'");
        }
        if (cell.batch < 1 || cell.k < 1) {
            throw ValidationError("perf table line " + std::to_string(lineno) +
                                  " needs batch >= 1 and k >= 1");
        }
        cells.push_back(cell);
    }
    if (cells.empty()) throw ValidationError("perf table has no cells: " + path.string());

    PerfTable t;
    for (const auto& c : cells) {
        t.batch_axis.push_back(c.batch);
        t.k_axis.push_back(c.k);
    }
    auto dedup = [](std::vector<std::uint32_t>& axis) {
        std::sort(axis.begin(), axis.end());
        axis.erase(std::unique(axis.begin(), axis.end()), axis.end());
    };
    dedup(t.batch_axis);
    dedup(t.k_axis);

    t.latencies.assign(t.batch_axis.size() * t.k_axis.size(), 0.0);
    std::vector<std::uint8_t> present(t.latencies.size(), 0);
    auto index_of = [](const std::vector<std::uint32_t>& axis, std::uint32_t v) {
        return static_cast<std::size_t>(
            std::lower_bound(axis.begin(), axis.end(), v) - axis.begin());
    };
    for (const auto& c : cells) {
        const std::size_t idx = index_of(t.batch_axis, c.batch) * t.k_axis.size() +
                                index_of(t.k_axis, c.k);
        if (present[idx]) {
            throw ValidationError("perf table cell (" + std::to_string(c.batch) + ", " +
                                  std::to_string(c.k) + ") appears more than once");
        }
        present[idx] = 1;
        t.latencies[idx] = c.latency;
    }
    for (std::size_t bi = 0; bi < t.batch_axis.size(); ++bi) {
        for (std::size_t ki = 0; ki < t.k_axis.size(); ++ki) {
            if (!present[bi * t.k_axis.size() + ki]) {
                throw ValidationError("perf table is missing cell (" +
                                      std::to_string(t.batch_axis[bi]) + ", " +
                                      std::to_string(t.k_axis[ki]) + ")");
            }
        }
    }
    validate(t);
    return t;
}

}  // namespace moeprism
