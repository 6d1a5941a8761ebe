#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moeprism/activation.hpp"
#include "moeprism/error.hpp"
#include "moeprism/partition.hpp"

namespace moeprism {

// Small gated FFN (SiLU(x W_gate) * (x W_up)) W_down. Neuron j owns column j
// of w_gate/w_up and row j of w_down, so the output decomposes neuron-wise.
struct ToyExpert {
    std::size_t d_model = 0;
    std::size_t d_ff = 0;
    std::vector<float> w_gate;  // d_model x d_ff, row-major
    std::vector<float> w_up;    // d_model x d_ff, row-major
    std::vector<float> w_down;  // d_ff x d_model, row-major
};

inline void validate(const ToyExpert& e) {
    if (e.d_model < 1 || e.d_ff < 1) {
        throw ValidationError("toy expert needs d_model >= 1 and d_ff >= 1");
    }
    if (e.w_gate.size() != e.d_model * e.d_ff || e.w_up.size() != e.d_model * e.d_ff ||
        e.w_down.size() != e.d_ff * e.d_model) {
        throw ValidationError("toy expert weight shapes do not match d_model=" +
                              std::to_string(e.d_model) + ", d_ff=" + std::to_string(e.d_ff));
    }
    for (const auto* w : {&e.w_gate, &e.w_up, &e.w_down}) {
        for (float v : *w) {
            if (!std::isfinite(v)) throw ValidationError("toy expert weight is not finite");
        }
    }
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

struct ForwardResult {
    std::vector<float> y;  // d_model output
    std::vector<float> a;  // d_ff intermediate activations
};

namespace detail {

inline void check_input(const ToyExpert& e, std::span<const float> x) {
    if (x.size() != e.d_model) {
        throw ValidationError("input length " + std::to_string(x.size()) +
                              " does not match d_model " + std::to_string(e.d_model));
    }
    for (float v : x) {
        if (!std::isfinite(v)) throw ValidationError("input vector is not finite");
    }
}

// a[j] = SiLU(x . w_gate[:,j]) * (x . w_up[:,j]); accumulation in double,
// result stored in float.
inline std::vector<float> intermediate_activations(const ToyExpert& e, std::span<const float> x) {
    std::vector<float> a(e.d_ff);
    for (std::size_t j = 0; j < e.d_ff; ++j) {
        double g = 0.0;
        double u = 0.0;
        for (std::size_t i = 0; i < e.d_model; ++i) {
            const double xi = x[i];
            g += xi * static_cast<double>(e.w_gate[i * e.d_ff + j]);
            u += xi * static_cast<double>(e.w_up[i * e.d_ff + j]);
        }
        a[j] = static_cast<float>(silu(g) * u);
    }
    return a;
}

}  // namespace detail

inline ForwardResult toy_ffn_forward(const ToyExpert& e, std::span<const float> x) {
    validate(e);
    detail::check_input(e, x);
    ForwardResult r;
    r.a = detail::intermediate_activations(e, x);
    r.y.assign(e.d_model, 0.0f);
    std::vector<double> acc(e.d_model, 0.0);
    for (std::size_t j = 0; j < e.d_ff; ++j) {
        const double aj = r.a[j];
        if (aj == 0.0) continue;
        const float* down = e.w_down.data() + j * e.d_model;
        for (std::size_t i = 0; i < e.d_model; ++i) {
            acc[i] += aj * static_cast<double>(down[i]);
        }
    }
    for (std::size_t i = 0; i < e.d_model; ++i) r.y[i] = static_cast<float>(acc[i]);
    return r;
}

// Output restricted to the given sub-experts. Neurons are accumulated in
// ascending index order, so activating every sub-expert reproduces
// toy_ffn_forward including its summation order.
inline std::vector<float> partitioned_forward(const ToyExpert& e, const Partition& p,
                                              std::span<const float> x,
                                              std::span<const std::uint32_t> active) {
    validate(e);
    validate(p);
    detail::check_input(e, x);
    if (p.assignment.size() != e.d_ff) {
        throw ValidationError("partition covers " + std::to_string(p.assignment.size()) +
                              " neurons but the expert has d_ff " + std::to_string(e.d_ff));
    }
    std::vector<std::uint8_t> is_active(p.n_subexperts, 0);
    for (std::uint32_t n : active) {
        if (n >= p.n_subexperts) {
            throw ValidationError("active sub-expert " + std::to_string(n) +
                                  " out of range for N=" + std::to_string(p.n_subexperts));
        }
        if (is_active[n]) throw ValidationError("active sub-expert list has duplicates");
        is_active[n] = 1;
    }

    const std::vector<float> a = detail::intermediate_activations(e, x);
    std::vector<double> acc(e.d_model, 0.0);
    for (std::size_t j = 0; j < e.d_ff; ++j) {
        if (!is_active[p.assignment[j]]) continue;
        const double aj = a[j];
        if (aj == 0.0) continue;
        const float* down = e.w_down.data() + j * e.d_model;
        for (std::size_t i = 0; i < e.d_model; ++i) {
            acc[i] += aj * static_cast<double>(down[i]);
        }
    }
    std::vector<float> y(e.d_model);
    for (std::size_t i = 0; i < e.d_model; ++i) y[i] = static_cast<float>(acc[i]);
    return y;
}

// Profile the expert on a calibration batch: row b holds |a| for inputs[b].
inline ActivationMatrix collect_activation_matrix(const ToyExpert& e,
                                                  const std::vector<std::vector<float>>& inputs) {
    validate(e);
    if (inputs.empty()) throw ValidationError("calibration input list is empty");
    ActivationMatrix m = make_activation_matrix(inputs.size(), e.d_ff);
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        detail::check_input(e, inputs[b]);
        const std::vector<float> a = detail::intermediate_activations(e, inputs[b]);
        for (std::size_t j = 0; j < e.d_ff; ++j) {
            m.at(b, j) = std::fabs(a[j]);
        }
    }
    return m;
}

}  // namespace moeprism
