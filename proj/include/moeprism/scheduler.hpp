#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "moeprism/error.hpp"
#include "moeprism/perfmodel.hpp"
#include "moeprism/rng.hpp"

namespace moeprism {

struct Request {
    std::uint64_t id = 0;
    double arrival_s = 0.0;
    std::uint32_t prompt_tokens = 1;
    std::uint32_t output_tokens = 1;
    std::uint32_t k_min = 1;  // minimum acceptable active sub-experts
};

inline std::uint64_t request_tokens(const Request& r) {
    return static_cast<std::uint64_t>(r.prompt_tokens) + r.output_tokens;
}

enum class Policy { prism, fifo, fullbatch };

inline const char* policy_name(Policy p) {
    switch (p) {
        case Policy::prism: return "prism";
        case Policy::fifo: return "fifo";
        case Policy::fullbatch: return "fullbatch";
    }
    return "?";
}

inline Policy parse_policy(const std::string& name) {
    if (name == "prism") return Policy::prism;
    if (name == "fifo") return Policy::fifo;
    if (name == "fullbatch") return Policy::fullbatch;
    throw ValidationError("unknown policy '" + name + "' (expected prism|fifo|fullbatch)");
}

enum class Trigger { utility, batch_full, timeout, none };

inline const char* trigger_name(Trigger t) {
    switch (t) {
        case Trigger::utility: return "utility";
        case Trigger::batch_full: return "batch_full";
        case Trigger::timeout: return "timeout";
        case Trigger::none: return "none";
    }
    return "?";
}

struct SchedulerConfig {
    std::uint32_t m_max = 32;  // quality levels: active sub-expert counts 1..m_max
    std::uint32_t b_max = 256;
    double t_max_s = 0.5;
    Policy policy = Policy::prism;
};

inline void validate(const SchedulerConfig& cfg) {
    if (cfg.m_max < 1) throw ValidationError("scheduler needs at least one quality level");
    if (cfg.b_max < 1) throw ValidationError("b_max must be >= 1");
    if (!(cfg.t_max_s > 0.0)) throw ValidationError("t_max_s must be positive");
}

// One queue per quality level m; a pending request with floor k sits in
// every queue m >= k, in arrival order.
struct VirtualQueues {
    std::uint32_t m_max = 0;
    std::vector<std::vector<std::uint64_t>> levels;  // levels[m-1] = Q_m
    std::unordered_map<std::uint64_t, Request> pending;

    explicit VirtualQueues(std::uint32_t m) : m_max(m), levels(m) {}

    const std::vector<std::uint64_t>& queue(std::uint32_t m) const { return levels.at(m - 1); }
    bool empty() const { return pending.empty(); }
    const Request& request(std::uint64_t id) const {
        auto it = pending.find(id);
        if (it == pending.end()) {
            throw ValidationError("request " + std::to_string(id) + " is not pending");
        }
        return it->second;
    }
};

inline void enqueue(VirtualQueues& q, const Request& r) {
    if (r.k_min < 1 || r.k_min > q.m_max) {
        throw ValidationError("request " + std::to_string(r.id) + " has quality floor " +
                              std::to_string(r.k_min) + " outside [1, " +
                              std::to_string(q.m_max) + "]");
    }
    if (r.prompt_tokens < 1 || r.output_tokens < 1) {
        throw ValidationError("request " + std::to_string(r.id) + " needs token counts >= 1");
    }
    if (!q.pending.emplace(r.id, r).second) {
        throw ValidationError("request " + std::to_string(r.id) + " enqueued twice");
    }
    for (std::uint32_t m = r.k_min; m <= q.m_max; ++m) {
        q.levels[m - 1].push_back(r.id);
    }
}

// U_m = token mass of the candidate batch (oldest min(|Q_m|, b_max) requests)
// over the predicted batch latency at level m; empty levels score 0.
inline std::vector<double> compute_utilities(const VirtualQueues& q, const PerfModel& perf,
                                             std::uint32_t b_max) {
    if (b_max < 1) throw ValidationError("b_max must be >= 1");
    std::vector<double> utilities(q.m_max, 0.0);
    for (std::uint32_t m = 1; m <= q.m_max; ++m) {
        const auto& level = q.levels[m - 1];
        if (level.empty()) continue;
        const std::size_t take = std::min<std::size_t>(level.size(), b_max);
        std::uint64_t tokens = 0;
        for (std::size_t i = 0; i < take; ++i) tokens += request_tokens(q.request(level[i]));
        utilities[m - 1] = static_cast<double>(tokens) / eval_cost(perf, take, m);
    }
    return utilities;
}

struct BatchDecision {
    std::uint32_t level = 0;
    std::vector<std::uint64_t> request_ids;
    double predicted_latency_s = 0.0;
    Trigger trigger = Trigger::none;
};

// Dispatch selection with trigger precedence timeout > batch-full > utility.
// Within a trigger class the highest-utility level wins; ties go to the
// lower level. Returns nothing when every queue is empty.
inline std::optional<BatchDecision> select_dispatch(const VirtualQueues& q, const PerfModel& perf,
                                                    const SchedulerConfig& cfg, double now_s) {
    validate(cfg);
    if (q.m_max != cfg.m_max) {
        throw ValidationError("virtual queues and config disagree on the level count");
    }
    if (q.empty()) return std::nullopt;

    const std::vector<double> utilities = compute_utilities(q, perf, cfg.b_max);

    std::uint32_t timed_out_level = 0;
    std::uint32_t full_level = 0;
    std::uint32_t best_level = 0;
    for (std::uint32_t m = 1; m <= q.m_max; ++m) {
        const auto& level = q.levels[m - 1];
        if (level.empty()) continue;
        const double u = utilities[m - 1];
        if (now_s - q.request(level.front()).arrival_s > cfg.t_max_s) {
            if (timed_out_level == 0 || u > utilities[timed_out_level - 1]) timed_out_level = m;
        }
        if (level.size() >= cfg.b_max) {
            if (full_level == 0 || u > utilities[full_level - 1]) full_level = m;
        }
        if (best_level == 0 || u > utilities[best_level - 1]) best_level = m;
    }

    BatchDecision d;
    if (timed_out_level != 0) {
        d.level = timed_out_level;
        d.trigger = Trigger::timeout;
    } else if (full_level != 0) {
        d.level = full_level;
        d.trigger = Trigger::batch_full;
    } else {
        d.level = best_level;
        d.trigger = Trigger::utility;
    }
    const auto& level = q.levels[d.level - 1];
    const std::size_t take = std::min<std::size_t>(level.size(), cfg.b_max);
    d.request_ids.assign(level.begin(), level.begin() + static_cast<std::ptrdiff_t>(take));
    d.predicted_latency_s = eval_cost(perf, take, d.level);
    return d;
}

// Atomic removal: every dispatched request leaves every queue that held it;
// the relative order of the remaining requests is unchanged.
inline void apply_dispatch(VirtualQueues& q, const BatchDecision& d) {
    std::unordered_set<std::uint64_t> gone;
    gone.reserve(d.request_ids.size());
    for (std::uint64_t id : d.request_ids) {
        auto it = q.pending.find(id);
        if (it == q.pending.end()) {
            throw ValidationError("request " + std::to_string(id) +
                                  " dispatched but not pending (double dispatch?)");
        }
        gone.insert(id);
    }
    for (std::uint64_t id : gone) q.pending.erase(id);
    for (auto& level : q.levels) {
        std::erase_if(level, [&](std::uint64_t id) { return gone.contains(id); });
    }
}

// ---------------------------------------------------------------------------
// Workload generation

struct TokenDist {
    enum class Kind { constant, uniform_int, geometric } kind = Kind::constant;
    std::uint32_t value = 1;   // constant
    std::uint32_t lo = 1;      // uniform_int
    std::uint32_t hi = 1;
    double p = 0.5;            // geometric (support starts at 1, mean 1/p)
};

inline void validate(const TokenDist& d) {
    switch (d.kind) {
        case TokenDist::Kind::constant:
            if (d.value < 1) throw ValidationError("constant token count must be >= 1");
            break;
        case TokenDist::Kind::uniform_int:
            if (d.lo < 1 || d.hi < d.lo) {
                throw ValidationError("uniform-int token range needs 1 <= lo <= hi");
            }
            break;
        case TokenDist::Kind::geometric:
            if (!(d.p > 0.0 && d.p <= 1.0)) {
                throw ValidationError("geometric token parameter must lie in (0, 1]");
            }
            break;
    }
}

inline std::uint32_t sample(const TokenDist& d, std::mt19937_64& rng) {
    switch (d.kind) {
        case TokenDist::Kind::constant:
            return d.value;
        case TokenDist::Kind::uniform_int:
            return d.lo + static_cast<std::uint32_t>(
                              uniform_index(rng, static_cast<std::uint64_t>(d.hi - d.lo) + 1));
        case TokenDist::Kind::geometric: {
            if (d.p >= 1.0) return 1;
            const double u = uniform01(rng);
            const double v = 1.0 + std::floor(std::log1p(-u) / std::log1p(-d.p));
            return static_cast<std::uint32_t>(
                std::min(v, static_cast<double>(std::numeric_limits<std::uint32_t>::max())));
        }
    }
    return 1;
}

struct WorkloadSpec {
    double duration_s = 0.0;
    double rate_per_s = 0.0;  // Poisson arrival rate
    std::vector<std::pair<std::uint32_t, double>> kmin_pmf;  // (level, probability)
    TokenDist prompt_tokens;
    TokenDist output_tokens;
    std::uint64_t seed = 0;
};

inline void validate(const WorkloadSpec& spec) {
    if (!(spec.duration_s > 0.0)) throw ValidationError("workload duration must be positive");
    if (!(spec.rate_per_s > 0.0)) throw ValidationError("arrival rate must be positive");
    if (spec.kmin_pmf.empty()) throw ValidationError("k_min pmf is empty");
    double sum = 0.0;
    std::uint32_t prev = 0;
    for (const auto& [m, p] : spec.kmin_pmf) {
        if (m < 1) throw ValidationError("k_min pmf levels must be >= 1");
        if (m <= prev) throw ValidationError("k_min pmf levels must be strictly increasing");
        if (p < 0.0 || !std::isfinite(p)) throw ValidationError("k_min pmf has a bad probability");
        sum += p;
        prev = m;
    }
    if (std::fabs(sum - 1.0) > 1e-9) {
        throw ValidationError("k_min pmf sums to " + std::to_string(sum) + ", expected 1");
    }
    validate(spec.prompt_tokens);
    validate(spec.output_tokens);
}

// Poisson arrivals truncated at the duration; per-request draws happen in a
// fixed order (gap, k_min, prompt, output) so a seed pins the workload.
inline std::vector<Request> generate_workload(const WorkloadSpec& spec) {
    validate(spec);
    std::mt19937_64 rng(spec.seed);
    std::vector<Request> out;
    double t = 0.0;
    std::uint64_t id = 0;
    for (;;) {
        t += -std::log1p(-uniform01(rng)) / spec.rate_per_s;
        if (t > spec.duration_s) break;
        Request r;
        r.id = id++;
        r.arrival_s = t;
        const double u = uniform01(rng);
        double cum = 0.0;
        r.k_min = spec.kmin_pmf.back().first;
        for (const auto& [m, p] : spec.kmin_pmf) {
            cum += p;
            if (u < cum) {
                r.k_min = m;
                break;
            }
        }
        r.prompt_tokens = sample(spec.prompt_tokens, rng);
        r.output_tokens = sample(spec.output_tokens, rng);
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Simulation

struct RequestRecord {
    std::uint64_t id = 0;
    double arrival_s = 0.0;
    double dispatch_s = 0.0;
    double first_token_s = 0.0;
    double complete_s = 0.0;
    std::uint32_t k_min = 1;
    std::uint32_t served_level = 1;
    Trigger trigger = Trigger::none;
    std::uint32_t prompt_tokens = 1;
    std::uint32_t output_tokens = 1;
};

struct SimReport {
    Policy policy = Policy::prism;
    std::vector<RequestRecord> records;  // sorted by id
    double span_s = 0.0;                 // first arrival to last completion
    double throughput_req_s = 0.0;
    double throughput_tokens_s = 0.0;
    double mean_ttft_s = 0.0;
    double p99_ttft_s = 0.0;
    double mean_tpot_s = 0.0;
    double p99_tpot_s = 0.0;
    double mean_e2e_s = 0.0;
    double p99_e2e_s = 0.0;
    std::uint64_t slo_violations = 0;
    std::uint64_t batches = 0;
    double max_batch_latency_s = 0.0;
};

namespace detail {

inline double percentile(std::vector<double> values, double p) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const double rank = p * static_cast<double>(values.size());
    std::size_t idx = static_cast<std::size_t>(std::ceil(rank));
    if (idx > 0) --idx;
    if (idx >= values.size()) idx = values.size() - 1;
    return values[idx];
}

struct BatchMetrics {
    double fixed_s = 0.0;
    double variable_s = 0.0;
};

// TTFT charges the fixed overhead plus the prompt's share of the variable
// time; the decode share spreads over the output tokens.
inline BatchMetrics split_batch_latency(const PerfModel& perf, double latency_s) {
    BatchMetrics m;
    if (const auto* analytic = std::get_if<AnalyticPerf>(&perf)) {
        m.fixed_s = std::min(analytic->fixed_s, latency_s);
    }
    m.variable_s = latency_s - m.fixed_s;
    return m;
}

inline void finalize_report(SimReport& report) {
    std::sort(report.records.begin(), report.records.end(),
              [](const RequestRecord& a, const RequestRecord& b) { return a.id < b.id; });
    if (report.records.empty()) return;

    double first_arrival = std::numeric_limits<double>::infinity();
    double last_complete = 0.0;
    double tokens = 0.0;
    std::vector<double> ttft, tpot, e2e;
    ttft.reserve(report.records.size());
    tpot.reserve(report.records.size());
    e2e.reserve(report.records.size());
    for (const auto& rec : report.records) {
        first_arrival = std::min(first_arrival, rec.arrival_s);
        last_complete = std::max(last_complete, rec.complete_s);
        tokens += static_cast<double>(rec.prompt_tokens) + rec.output_tokens;
        ttft.push_back(rec.first_token_s - rec.arrival_s);
        tpot.push_back((rec.complete_s - rec.first_token_s) / rec.output_tokens);
        e2e.push_back(rec.complete_s - rec.arrival_s);
        if (rec.served_level < rec.k_min) ++report.slo_violations;
    }
    report.span_s = last_complete - first_arrival;
    if (report.span_s > 0.0) {
        report.throughput_req_s = static_cast<double>(report.records.size()) / report.span_s;
        report.throughput_tokens_s = tokens / report.span_s;
    }
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    report.mean_ttft_s = mean(ttft);
    report.mean_tpot_s = mean(tpot);
    report.mean_e2e_s = mean(e2e);
    report.p99_ttft_s = percentile(ttft, 0.99);
    report.p99_tpot_s = percentile(tpot, 0.99);
    report.p99_e2e_s = percentile(e2e, 0.99);
}

}  // namespace detail

// Event-driven serving simulation with a single batch in flight. The prism
// policy runs the virtual-queue scheduler; fifo dispatches pending requests
// in arrival order whenever idle; fullbatch waits for b_max pending (or
// workload exhaustion). Baselines serve each batch at the highest quality
// floor it contains.
inline SimReport run_simulation(const std::vector<Request>& workload, const SchedulerConfig& cfg,
                                const PerfModel& perf) {
    validate(cfg);
    for (std::size_t i = 1; i < workload.size(); ++i) {
        if (workload[i].arrival_s < workload[i - 1].arrival_s) {
            throw ValidationError("workload must be sorted by arrival time");
        }
    }
    for (const auto& r : workload) {
        if (r.k_min < 1 || r.k_min > cfg.m_max) {
            throw ValidationError("request " + std::to_string(r.id) + " has quality floor " +
                                  std::to_string(r.k_min) + " outside [1, " +
                                  std::to_string(cfg.m_max) + "]");
        }
        if (r.prompt_tokens < 1 || r.output_tokens < 1) {
            throw ValidationError("request " + std::to_string(r.id) +
                                  " needs token counts >= 1");
        }
    }

    SimReport report;
    report.policy = cfg.policy;
    report.records.reserve(workload.size());

    VirtualQueues queues(cfg.m_max);
    std::deque<Request> fifo_pending;
    std::size_t next_arrival = 0;
    double now = 0.0;
    bool busy = false;
    double busy_until = 0.0;

    auto ingest_due = [&](double t) {
        while (next_arrival < workload.size() && workload[next_arrival].arrival_s <= t) {
            const Request& r = workload[next_arrival++];
            if (cfg.policy == Policy::prism) {
                enqueue(queues, r);
            } else {
                fifo_pending.push_back(r);
            }
        }
    };

    auto launch = [&](const std::vector<Request>& batch, std::uint32_t level, Trigger trigger) {
        const double latency = eval_cost(perf, batch.size(), level);
        const auto split = detail::split_batch_latency(perf, latency);
        for (const Request& r : batch) {
            RequestRecord rec;
            rec.id = r.id;
            rec.arrival_s = r.arrival_s;
            rec.dispatch_s = now;
            const double tokens = static_cast<double>(request_tokens(r));
            rec.first_token_s =
                now + split.fixed_s + split.variable_s * (r.prompt_tokens / tokens);
            rec.complete_s = now + latency;
            rec.k_min = r.k_min;
            rec.served_level = level;
            rec.trigger = trigger;
            rec.prompt_tokens = r.prompt_tokens;
            rec.output_tokens = r.output_tokens;
            report.records.push_back(rec);
        }
        ++report.batches;
        report.max_batch_latency_s = std::max(report.max_batch_latency_s, latency);
        busy = true;
        busy_until = now + latency;
    };

    auto try_dispatch = [&]() -> bool {
        if (cfg.policy == Policy::prism) {
            const auto decision = select_dispatch(queues, perf, cfg, now);
            if (!decision) return false;
            std::vector<Request> batch;
            batch.reserve(decision->request_ids.size());
            for (std::uint64_t id : decision->request_ids) batch.push_back(queues.request(id));
            apply_dispatch(queues, *decision);
            launch(batch, decision->level, decision->trigger);
            return true;
        }
        if (fifo_pending.empty()) return false;
        if (cfg.policy == Policy::fullbatch && fifo_pending.size() < cfg.b_max &&
            next_arrival < workload.size()) {
            return false;  // keep waiting for a full batch
        }
        const std::size_t take = std::min<std::size_t>(fifo_pending.size(), cfg.b_max);
        std::vector<Request> batch(fifo_pending.begin(),
                                   fifo_pending.begin() + static_cast<std::ptrdiff_t>(take));
        fifo_pending.erase(fifo_pending.begin(),
                           fifo_pending.begin() + static_cast<std::ptrdiff_t>(take));
        std::uint32_t level = 1;
        for (const Request& r : batch) level = std::max(level, r.k_min);
        launch(batch, level, Trigger::none);
        return true;
    };

    for (;;) {
        ingest_due(now);
        if (!busy) {
            if (try_dispatch()) continue;
            if (next_arrival < workload.size()) {
                now = workload[next_arrival].arrival_s;
                continue;
            }
            break;  // idle, nothing pending, no arrivals left
        }
        const double next_arr = next_arrival < workload.size()
                                    ? workload[next_arrival].arrival_s
                                    : std::numeric_limits<double>::infinity();
        if (busy_until <= next_arr) {
            now = busy_until;
            busy = false;
        } else {
            now = next_arr;
        }
    }

    detail::finalize_report(report);
    return report;
}

}  // namespace moeprism
