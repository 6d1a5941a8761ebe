#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "moeprism/error.hpp"
#include "moeprism/rng.hpp"

namespace moeprism {

// Per-token, per-neuron intermediate activation magnitudes of one expert.
// Row b holds |a| for calibration token b; column c is neuron c.
struct ActivationMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;  // row-major, non-negative, finite

    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
};

inline ActivationMatrix make_activation_matrix(std::size_t rows, std::size_t cols) {
    ActivationMatrix m;
    m.rows = rows;
    m.cols = cols;
    m.data.assign(rows * cols, 0.0f);
    return m;
}

inline void validate(const ActivationMatrix& m) {
    if (m.rows < 1 || m.cols < 1) {
        throw ValidationError("activation matrix must have at least one row and one column");
    }
    if (m.data.size() != m.rows * m.cols) {
        throw ValidationError("activation matrix data length " + std::to_string(m.data.size()) +
                              " does not match " + std::to_string(m.rows) + "x" +
                              std::to_string(m.cols));
    }
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        const float v = m.data[i];
        if (!std::isfinite(v) || v < 0.0f) {
            throw ValidationError("activation matrix entry at row " + std::to_string(i / m.cols) +
                                  ", col " + std::to_string(i % m.cols) +
                                  " is not a finite non-negative magnitude");
        }
    }
}

// Row-wise top-k_a mask over an activation matrix.
struct BinaryActivation {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t k_a = 0;  // ones per row (min(k_a, cols))
    std::vector<std::uint8_t> bits;  // row-major 0/1

    std::uint8_t at(std::size_t r, std::size_t c) const { return bits[r * cols + c]; }
};

inline void validate(const BinaryActivation& b) {
    if (b.rows < 1 || b.cols < 1 || b.bits.size() != b.rows * b.cols) {
        throw ValidationError("binary activation shape is inconsistent");
    }
    const std::size_t want = std::min(b.k_a, b.cols);
    for (std::size_t r = 0; r < b.rows; ++r) {
        std::size_t ones = 0;
        for (std::size_t c = 0; c < b.cols; ++c) {
            const std::uint8_t v = b.at(r, c);
            if (v > 1) throw ValidationError("binary activation holds a non 0/1 value");
            ones += v;
        }
        if (ones != want) {
            throw ValidationError("binary activation row " + std::to_string(r) + " has " +
                                  std::to_string(ones) + " ones, expected " + std::to_string(want));
        }
    }
}

// Symmetric pair counts: entry (i, j) is the number of tokens for which
// neurons i and j were simultaneously active.
struct CoActivationMatrix {
    std::size_t dim = 0;
    std::vector<std::uint32_t> data;  // dim x dim, row-major

    std::uint32_t at(std::size_t i, std::size_t j) const { return data[i * dim + j]; }
    std::uint32_t& at(std::size_t i, std::size_t j) { return data[i * dim + j]; }
};

// Synthetic activation profile: i.i.d. entries whose distribution passes
// through the given (probability, magnitude) quantile targets.
struct SynthSpec {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::pair<double, double>> quantiles;  // (p, q), p strictly increasing in (0,1)
    std::uint64_t seed = 0;
};

inline void validate(const SynthSpec& spec) {
    if (spec.rows < 1 || spec.cols < 1) {
        throw ValidationError("synthetic spec needs rows >= 1 and cols >= 1");
    }
    if (spec.quantiles.empty()) {
        throw ValidationError("synthetic spec needs at least one quantile target");
    }
    double prev_p = 0.0;
    double prev_q = -1.0;
    for (const auto& [p, q] : spec.quantiles) {
        if (!(p > 0.0 && p < 1.0) || !std::isfinite(p)) {
            throw ValidationError("quantile probabilities must lie strictly inside (0, 1)");
        }
        if (p <= prev_p) {
            throw ValidationError("quantile probabilities must be strictly increasing");
        }
        if (!std::isfinite(q) || q < 0.0 || q < prev_q) {
            throw ValidationError("quantile magnitudes must be non-negative and non-decreasing");
        }
        prev_p = p;
        prev_q = q;
    }
}

namespace detail {

// Inverse CDF through the quantile targets: log-linear between knots, with
// boundary knots extrapolated from the nearest segment. Zero-valued knots
// fall back to linear interpolation (an atom at zero below the first
// positive target).
class QuantileCurve {
public:
    explicit QuantileCurve(const std::vector<std::pair<double, double>>& targets) {
        const std::size_t k = targets.size();
        ps_.reserve(k + 2);
        qs_.reserve(k + 2);

        const double q_first = targets.front().second;
        const double q_last = targets.back().second;

        double q_lo = q_first;
        double q_hi = q_last;
        if (k >= 2) {
            const auto& [p1, q1] = targets[0];
            const auto& [p2, q2] = targets[1];
            if (q1 > 0.0 && q2 > q1) {
                const double slope = (std::log(q2) - std::log(q1)) / (p2 - p1);
                q_lo = std::exp(std::log(q1) - slope * p1);
            } else if (q1 > 0.0) {
                q_lo = q1;
            } else {
                q_lo = 0.0;
            }
            const auto& [pa, qa] = targets[k - 2];
            const auto& [pb, qb] = targets[k - 1];
            if (qa > 0.0 && qb > qa) {
                const double slope = (std::log(qb) - std::log(qa)) / (pb - pa);
                q_hi = std::exp(std::log(qb) + slope * (1.0 - pb));
            } else {
                q_hi = qb > 0.0 ? qb * 2.0 : 0.0;
            }
        } else {
            q_lo = q_first > 0.0 ? q_first * 0.5 : 0.0;
            q_hi = q_last > 0.0 ? q_last * 2.0 : 0.0;
        }

        ps_.push_back(0.0);
        qs_.push_back(q_lo);
        for (const auto& [p, q] : targets) {
            ps_.push_back(p);
            qs_.push_back(q);
        }
        ps_.push_back(1.0);
        qs_.push_back(q_hi);
    }

    double operator()(double u) const {
        std::size_t hi = 1;
        while (hi + 1 < ps_.size() && u >= ps_[hi]) ++hi;
        const std::size_t lo = hi - 1;
        const double qa = qs_[lo];
        const double qb = qs_[hi];
        if (qa == qb) return qa;
        const double t = (u - ps_[lo]) / (ps_[hi] - ps_[lo]);
        if (qa == 0.0) return qb * t;
        return std::exp((1.0 - t) * std::log(qa) + t * std::log(qb));
    }

private:
    std::vector<double> ps_;
    std::vector<double> qs_;
};

}  // namespace detail

// Deterministic per seed; every entry is an independent draw through the
// fitted inverse CDF.
inline ActivationMatrix generate_synthetic_activations(const SynthSpec& spec) {
    validate(spec);
    const detail::QuantileCurve icdf(spec.quantiles);
    std::mt19937_64 rng(spec.seed);
    ActivationMatrix m = make_activation_matrix(spec.rows, spec.cols);
    for (auto& v : m.data) {
        v = static_cast<float>(icdf(uniform01(rng)));
    }
    return m;
}

// Per row, the k_a largest magnitudes become 1; ties broken by lower
// column index.
inline BinaryActivation binarize_topk(const ActivationMatrix& m, std::size_t k_a) {
    validate(m);
    if (k_a < 1 || k_a > m.cols) {
        throw ValidationError("k_a = " + std::to_string(k_a) + " out of range [1, " +
                              std::to_string(m.cols) + "]");
    }
    BinaryActivation out;
    out.rows = m.rows;
    out.cols = m.cols;
    out.k_a = k_a;
    out.bits.assign(m.rows * m.cols, 0);

    std::vector<std::uint32_t> order(m.cols);
    for (std::size_t r = 0; r < m.rows; ++r) {
        std::iota(order.begin(), order.end(), 0u);
        const float* row = m.data.data() + r * m.cols;
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k_a - 1),
                         order.end(), [row](std::uint32_t a, std::uint32_t b) {
                             if (row[a] != row[b]) return row[a] > row[b];
                             return a < b;
                         });
        for (std::size_t i = 0; i < k_a; ++i) {
            out.bits[r * m.cols + order[i]] = 1;
        }
    }
    return out;
}

// C_co = B^T B over the 0/1 mask; entry (i, j) counts rows where both are set.
inline CoActivationMatrix coactivation(const BinaryActivation& bin) {
    validate(bin);
    CoActivationMatrix co;
    co.dim = bin.cols;
    co.data.assign(bin.cols * bin.cols, 0u);

    std::vector<std::uint32_t> active;
    active.reserve(std::min(bin.k_a, bin.cols));
    for (std::size_t r = 0; r < bin.rows; ++r) {
        active.clear();
        for (std::size_t c = 0; c < bin.cols; ++c) {
            if (bin.at(r, c)) active.push_back(static_cast<std::uint32_t>(c));
        }
        for (std::size_t i = 0; i < active.size(); ++i) {
            for (std::size_t j = i; j < active.size(); ++j) {
                ++co.at(active[i], active[j]);
            }
        }
    }
    // mirror the upper triangle
    for (std::size_t i = 0; i < co.dim; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            co.at(i, j) = co.at(j, i);
        }
    }
    return co;
}

// Empirical quantile (nearest rank) over all entries; used by reporting
// and the synthetic-profile checks.
inline double empirical_quantile(const ActivationMatrix& m, double p) {
    std::vector<float> sorted(m.data);
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    std::size_t idx = static_cast<std::size_t>(p * static_cast<double>(n));
    if (idx >= n) idx = n - 1;
    return sorted[idx];
}

}  // namespace moeprism
