#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "moeprism/offload.hpp"
#include "support.hpp"

using namespace moeprism;

namespace {

OffloadConfig reference_config(Granularity g) {
    OffloadConfig cfg;
    cfg.n_experts = 64;
    cfg.subexperts_per_expert = 4;
    cfg.expert_bytes = 64'000'000;
    cfg.vram_bytes = 1'824'000'000;  // 28.5 expert sizes
    cfg.pcie_bytes_per_s = 25e9;
    cfg.compute_s_per_subexpert = 1e-4;
    cfg.granularity = g;
    return cfg;
}

}  // namespace

TEST_SUITE("offload") {

TEST_CASE("capacity residency reproduces the 28.5-expert budget split") {
    CHECK(capacity_residency(reference_config(Granularity::monolithic)) == 0.4375);  // 28/64
    CHECK(capacity_residency(reference_config(Granularity::fine)) == 114.0 / 256.0);  // 0.4453...
}

TEST_CASE("capacity residency saturates at 1") {
    OffloadConfig cfg = reference_config(Granularity::monolithic);
    cfg.vram_bytes = cfg.expert_bytes * 100;
    CHECK(capacity_residency(cfg) == 1.0);
}

TEST_CASE("required units quantize demand up at each granularity") {
    const OffloadConfig mono = reference_config(Granularity::monolithic);
    const OffloadConfig fine = reference_config(Granularity::fine);
    CHECK(required_units(4.2, mono) == 5);
    CHECK(required_units(4.2, fine) == 17);
    CHECK(required_units(5.0, mono) == 5);
    CHECK(required_units(5.0, fine) == 20);
    CHECK_THROWS_AS(required_units(0.0, mono), ValidationError);
}

TEST_CASE("fine units never need more bytes than monolithic units") {
    const OffloadConfig mono = reference_config(Granularity::monolithic);
    const OffloadConfig fine = reference_config(Granularity::fine);
    for (double k = 0.1; k < 12.0; k += 0.37) {
        const auto mono_bytes = required_units(k, mono) * unit_bytes(mono);
        const auto fine_bytes = required_units(k, fine) * unit_bytes(fine);
        CHECK(fine_bytes <= mono_bytes);
    }
}

TEST_CASE("full-locality traces repeat the first step") {
    const OffloadConfig cfg = reference_config(Granularity::fine);
    const RoutingTrace trace = generate_routing_trace(20, 4.2, 1.0, cfg, 3);
    for (const auto& step : trace.steps) {
        CHECK(step == trace.steps.front());
    }
}

TEST_CASE("zero-locality traces redraw every step") {
    const OffloadConfig cfg = reference_config(Granularity::fine);
    const RoutingTrace trace = generate_routing_trace(50, 4.2, 0.0, cfg, 4);
    // consecutive steps should differ essentially always with 17 of 256 units
    std::size_t identical = 0;
    for (std::size_t t = 1; t < trace.steps.size(); ++t) {
        if (trace.steps[t] == trace.steps[t - 1]) ++identical;
    }
    CHECK(identical == 0);
}

TEST_CASE("traces are deterministic per seed and sized by the demand") {
    const OffloadConfig cfg = reference_config(Granularity::fine);
    const RoutingTrace a = generate_routing_trace(16, 4.2, 0.6, cfg, 9);
    const RoutingTrace b = generate_routing_trace(16, 4.2, 0.6, cfg, 9);
    CHECK(a.steps == b.steps);
    for (const auto& step : a.steps) CHECK(step.size() == 17);

    const RoutingTrace c = generate_routing_trace(16, 4.2, 0.6, cfg, 10);
    CHECK(a.steps != c.steps);
}

TEST_CASE("mean step overlap tracks the locality parameter") {
    const OffloadConfig cfg = reference_config(Granularity::fine);
    const double p = 0.6;
    double overlap = 0.0;
    std::size_t pairs = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const RoutingTrace trace = generate_routing_trace(500, 4.2, p, cfg, 2000 + seed);
        for (std::size_t t = 1; t < trace.steps.size(); ++t) {
            std::set<std::uint32_t> prev(trace.steps[t - 1].begin(), trace.steps[t - 1].end());
            for (std::uint32_t id : trace.steps[t]) overlap += prev.count(id);
            ++pairs;
        }
    }
    const double mean = overlap / static_cast<double>(pairs);
    const double want = p * 17.0;
    CHECK(std::fabs(mean - want) <= 0.05 * want);
}

TEST_CASE("oversized demand is rejected") {
    OffloadConfig cfg = reference_config(Granularity::monolithic);
    CHECK_THROWS_AS(generate_routing_trace(4, 65.0, 0.5, cfg, 0), ValidationError);
}

TEST_CASE("hits cost no I/O") {
    const OffloadConfig cfg = reference_config(Granularity::fine);
    CacheState cache = make_cache(cfg);
    const std::vector<std::uint32_t> req = {1, 2, 3};
    cache_step(cache, req, cfg);
    const StepLatency second = cache_step(cache, req, cfg);
    CHECK(second.miss_count == 0);
    CHECK(second.io_s == 0.0);
    CHECK(second.total_s == second.compute_s);
}

TEST_CASE("step latency matches the worked 50 MB example") {
    OffloadConfig cfg;
    cfg.n_experts = 16;
    cfg.subexperts_per_expert = 4;
    cfg.expert_bytes = 200'000'000;  // 50 MB sub-experts
    cfg.vram_bytes = 800'000'000;
    cfg.pcie_bytes_per_s = 25e9;
    cfg.compute_s_per_subexpert = 1e-4;
    cfg.granularity = Granularity::fine;

    CacheState cache = make_cache(cfg);
    std::vector<std::uint32_t> warm = {0, 1, 2, 3, 4, 5};
    cache_step(cache, warm, cfg);
    // 8 required, 2 of them missing
    std::vector<std::uint32_t> req = {0, 1, 2, 3, 4, 5, 6, 7};
    const StepLatency lat = cache_step(cache, req, cfg);
    CHECK(lat.miss_count == 2);
    CHECK(lat.io_s == doctest::Approx(0.004).epsilon(1e-12));      // 100 MB / 25 GB/s
    CHECK(lat.compute_s == doctest::Approx(0.0008).epsilon(1e-12));  // 8 x 0.1 ms
    CHECK(lat.total_s == lat.io_s + lat.compute_s);
}

TEST_CASE("LRU hand trace: capacity 2, a b c a") {
    OffloadConfig cfg;
    cfg.n_experts = 8;
    cfg.subexperts_per_expert = 1;
    cfg.expert_bytes = 100;
    cfg.vram_bytes = 200;  // two units
    cfg.pcie_bytes_per_s = 1e9;
    cfg.compute_s_per_subexpert = 1e-6;
    cfg.granularity = Granularity::monolithic;

    CacheState cache = make_cache(cfg);
    std::uint64_t misses = 0;
    for (std::uint32_t id : {0u, 1u, 2u, 0u}) {
        const std::vector<std::uint32_t> req = {id};
        misses += cache_step(cache, req, cfg).miss_count;
    }
    CHECK(misses == 4);
    CHECK(cache.resident == std::unordered_set<std::uint32_t>{2u, 0u});
    CHECK(cache.lru_order == std::vector<std::uint32_t>{2u, 0u});
}

TEST_CASE("cache never exceeds capacity and always holds the request") {
    OffloadConfig cfg = reference_config(Granularity::fine);
    cfg.vram_bytes = 20 * unit_bytes(cfg);  // tight cache
    CacheState cache = make_cache(cfg);
    const RoutingTrace trace = generate_routing_trace(200, 4.2, 0.5, cfg, 31);
    for (const auto& step : trace.steps) {
        cache_step(cache, step, cfg);
        CHECK(cache.resident.size() <= cache.capacity_units);
        CHECK(cache.lru_order.size() == cache.resident.size());
        for (std::uint32_t id : step) CHECK(cache.resident.contains(id));
    }
}

TEST_CASE("requests above capacity are rejected") {
    OffloadConfig cfg = reference_config(Granularity::fine);
    cfg.vram_bytes = 2 * unit_bytes(cfg);
    CacheState cache = make_cache(cfg);
    const std::vector<std::uint32_t> req = {0, 1, 2};
    CHECK_THROWS_AS(cache_step(cache, req, cfg), ValidationError);
}

TEST_CASE("miss sequences agree with an independent LRU reference") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        std::mt19937_64 rng(7000 + seed);
        OffloadConfig cfg;
        cfg.n_experts = static_cast<std::uint32_t>(4 + uniform_index(rng, 7));  // 4..10 units
        cfg.subexperts_per_expert = 1;
        cfg.expert_bytes = 1000;
        const std::uint64_t capacity = 2 + uniform_index(rng, 3);  // 2..4 units
        cfg.vram_bytes = capacity * 1000;
        cfg.pcie_bytes_per_s = 1e9;
        cfg.compute_s_per_subexpert = 1e-6;
        cfg.granularity = Granularity::monolithic;

        std::vector<std::vector<std::uint32_t>> steps;
        const std::size_t n_steps = 10 + uniform_index(rng, 41);  // up to 50
        for (std::size_t t = 0; t < n_steps; ++t) {
            const std::size_t want = 1 + uniform_index(rng, capacity);
            std::set<std::uint32_t> req;
            while (req.size() < want) {
                req.insert(static_cast<std::uint32_t>(uniform_index(rng, cfg.n_experts)));
            }
            steps.emplace_back(req.begin(), req.end());
        }

        CacheState cache = make_cache(cfg);
        std::vector<std::uint64_t> got;
        for (const auto& step : steps) got.push_back(cache_step(cache, step, cfg).miss_count);
        CHECK(got == testsupport::lru_reference(steps, capacity));
    }
}

TEST_CASE("run_offload_sim folds from a cold cache") {
    const OffloadConfig cfg = reference_config(Granularity::fine);
    RoutingTrace trace;
    trace.granularity = cfg.granularity;
    trace.n_units = total_units(cfg);
    trace.steps = {{0, 1, 2, 3}};
    trace.k_equiv = {1.0};
    const OffloadReport report = run_offload_sim(trace, cfg);
    CHECK(report.total_misses == 4);
    CHECK(report.hit_ratio == 0.0);
    CHECK(report.io_s ==
          doctest::Approx(4.0 * unit_bytes(cfg) / cfg.pcie_bytes_per_s).epsilon(1e-12));
}

TEST_CASE("a repeating trace only misses on the first step") {
    const OffloadConfig cfg = reference_config(Granularity::fine);
    const RoutingTrace trace = generate_routing_trace(32, 4.2, 1.0, cfg, 5);
    const OffloadReport report = run_offload_sim(trace, cfg);
    CHECK(report.total_misses == 17);
    CHECK(report.step_latencies.front().miss_count == 17);
    for (std::size_t t = 1; t < report.step_latencies.size(); ++t) {
        CHECK(report.step_latencies[t].miss_count == 0);
    }
}

TEST_CASE("every step satisfies total = io + compute exactly") {
    const OffloadConfig cfg = reference_config(Granularity::fine);
    const RoutingTrace trace = generate_routing_trace(100, 4.2, 0.6, cfg, 6);
    const OffloadReport report = run_offload_sim(trace, cfg);
    for (const auto& lat : report.step_latencies) {
        CHECK(lat.total_s == lat.io_s + lat.compute_s);
    }
}

TEST_CASE("halving the unit size halves the I/O for the same misses") {
    OffloadConfig cfg = reference_config(Granularity::fine);
    StepLatency a, b;
    {
        CacheState cache = make_cache(cfg);
        a = cache_step(cache, {0, 1, 2, 3}, cfg);
    }
    cfg.expert_bytes /= 2;
    cfg.vram_bytes /= 2;
    {
        CacheState cache = make_cache(cfg);
        b = cache_step(cache, {0, 1, 2, 3}, cfg);
    }
    CHECK(a.miss_count == b.miss_count);
    CHECK(b.io_s == doctest::Approx(a.io_s / 2.0).epsilon(1e-12));
}

TEST_CASE("fine granularity beats monolithic on matched traces") {
    std::size_t fine_wins = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const OffloadConfig mono = reference_config(Granularity::monolithic);
        const OffloadConfig fine = reference_config(Granularity::fine);
        const auto mono_report =
            run_offload_sim(generate_routing_trace(256, 4.2, 0.6, mono, seed), mono);
        const auto fine_report =
            run_offload_sim(generate_routing_trace(256, 4.2, 0.6, fine, seed), fine);
        if (fine_report.total_s < mono_report.total_s) ++fine_wins;
    }
    CHECK(fine_wins == 5);
}

TEST_CASE("mismatched trace and config granularity is rejected") {
    const OffloadConfig mono = reference_config(Granularity::monolithic);
    const OffloadConfig fine = reference_config(Granularity::fine);
    const RoutingTrace trace = generate_routing_trace(4, 4.2, 0.5, fine, 0);
    CHECK_THROWS_AS(run_offload_sim(trace, mono), ValidationError);
}

}  // TEST_SUITE
