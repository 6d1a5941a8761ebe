#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "moeprism/activation.hpp"
#include "support.hpp"

using namespace moeprism;

TEST_SUITE("activation") {

TEST_CASE("matrix invariants are enforced") {
    ActivationMatrix m = make_activation_matrix(2, 3);
    CHECK_NOTHROW(validate(m));

    m.data.pop_back();
    CHECK_THROWS_AS(validate(m), ValidationError);

    m = make_activation_matrix(2, 3);
    m.at(1, 2) = -1.0f;
    CHECK_THROWS_AS(validate(m), ValidationError);

    m.at(1, 2) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(validate(m), ValidationError);

    CHECK_THROWS_AS(validate(make_activation_matrix(0, 3)), ValidationError);
}

TEST_CASE("synthetic generator hits its quantile targets") {
    SynthSpec spec;
    spec.rows = 1000;
    spec.cols = 1024;
    spec.quantiles = {{0.5, 0.0167}, {0.75, 0.0391}};
    spec.seed = 7;
    const ActivationMatrix m = generate_synthetic_activations(spec);
    validate(m);
    for (const auto& [p, q] : spec.quantiles) {
        const double got = empirical_quantile(m, p);
        CHECK(std::fabs(got - q) <= 0.05 * q);
    }
}

TEST_CASE("synthetic generator is a pure function of the spec") {
    SynthSpec spec;
    spec.rows = 64;
    spec.cols = 48;
    spec.quantiles = {{0.5, 0.02}, {0.9, 0.3}};
    spec.seed = 123;
    const ActivationMatrix a = generate_synthetic_activations(spec);
    const ActivationMatrix b = generate_synthetic_activations(spec);
    CHECK(a.data == b.data);

    spec.seed = 124;
    const ActivationMatrix c = generate_synthetic_activations(spec);
    CHECK(a.data != c.data);
}

TEST_CASE("degenerate zero quantile produces zeros below the target") {
    SynthSpec spec;
    spec.rows = 100;
    spec.cols = 100;
    spec.quantiles = {{0.5, 0.0}};
    spec.seed = 3;
    const ActivationMatrix m = generate_synthetic_activations(spec);
    std::size_t zeros = 0;
    for (float v : m.data) {
        if (v == 0.0f) ++zeros;
    }
    CHECK(zeros >= m.data.size() / 2);
}

TEST_CASE("non-monotone quantile lists are rejected") {
    SynthSpec spec;
    spec.rows = 4;
    spec.cols = 4;
    spec.quantiles = {{0.5, 0.2}, {0.75, 0.1}};
    CHECK_THROWS_AS(generate_synthetic_activations(spec), ValidationError);

    spec.quantiles = {{0.75, 0.1}, {0.5, 0.2}};
    CHECK_THROWS_AS(generate_synthetic_activations(spec), ValidationError);

    spec.quantiles = {};
    CHECK_THROWS_AS(generate_synthetic_activations(spec), ValidationError);
}

TEST_CASE("binarize_topk marks the k largest per row") {
    ActivationMatrix m = make_activation_matrix(1, 3);
    m.data = {5.0f, 1.0f, 3.0f};
    const BinaryActivation bin = binarize_topk(m, 2);
    CHECK(bin.bits == std::vector<std::uint8_t>{1, 0, 1});
}

TEST_CASE("binarize_topk breaks ties toward the lower column") {
    ActivationMatrix m = make_activation_matrix(1, 3);
    m.data = {2.0f, 2.0f, 0.0f};
    const BinaryActivation bin = binarize_topk(m, 1);
    CHECK(bin.bits == std::vector<std::uint8_t>{1, 0, 0});
}

TEST_CASE("binarize_topk saturates at k = C and rejects out-of-range k") {
    const ActivationMatrix m = testsupport::random_matrix(4, 6, 11);
    const BinaryActivation bin = binarize_topk(m, 6);
    for (std::uint8_t b : bin.bits) CHECK(b == 1);

    CHECK_THROWS_AS(binarize_topk(m, 0), ValidationError);
    CHECK_THROWS_AS(binarize_topk(m, 7), ValidationError);
}

TEST_CASE("binarize_topk row sums equal min(k, C) on random inputs") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const ActivationMatrix m = testsupport::random_matrix(16, 24, 100 + seed);
        const std::size_t k = 1 + seed % 24;
        const BinaryActivation bin = binarize_topk(m, k);
        CHECK_NOTHROW(validate(bin));  // validates exact row sums
    }
}

TEST_CASE("coactivation matches the worked 2x3 example") {
    BinaryActivation bin;
    bin.rows = 2;
    bin.cols = 3;
    bin.k_a = 2;
    bin.bits = {1, 1, 0, 1, 0, 1};
    const CoActivationMatrix co = coactivation(bin);
    const std::vector<std::uint32_t> want = {2, 1, 1, 1, 1, 0, 1, 0, 1};
    CHECK(co.data == want);
}

TEST_CASE("coactivation of an all-zero mask is the zero matrix") {
    BinaryActivation bin;
    bin.rows = 3;
    bin.cols = 4;
    bin.k_a = 0;
    bin.bits.assign(12, 0);
    const CoActivationMatrix co = coactivation(bin);
    for (std::uint32_t v : co.data) CHECK(v == 0);
}

TEST_CASE("coactivation of a single all-ones row is all ones") {
    BinaryActivation bin;
    bin.rows = 1;
    bin.cols = 4;
    bin.k_a = 4;
    bin.bits.assign(4, 1);
    const CoActivationMatrix co = coactivation(bin);
    for (std::uint32_t v : co.data) CHECK(v == 1);
}

TEST_CASE("coactivation equals brute-force pair counting") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(900 + seed);
        const std::size_t rows = 1 + uniform_index(rng, 32);
        const std::size_t cols = 2 + uniform_index(rng, 31);
        const std::size_t k = 1 + uniform_index(rng, cols);
        const BinaryActivation bin = testsupport::random_binary(rows, cols, k, 40 + seed);
        const CoActivationMatrix co = coactivation(bin);
        CHECK(co.data == testsupport::coactivation_reference(bin));
    }
}

TEST_CASE("coactivation is symmetric with per-neuron counts on the diagonal") {
    const ActivationMatrix m = testsupport::random_matrix(20, 12, 77);
    const BinaryActivation bin = binarize_topk(m, 5);
    const CoActivationMatrix co = coactivation(bin);
    for (std::size_t i = 0; i < co.dim; ++i) {
        std::uint32_t active = 0;
        for (std::size_t r = 0; r < bin.rows; ++r) active += bin.at(r, i);
        CHECK(co.at(i, i) == active);
        for (std::size_t j = 0; j < co.dim; ++j) {
            CHECK(co.at(i, j) == co.at(j, i));
        }
    }
}

}  // TEST_SUITE
