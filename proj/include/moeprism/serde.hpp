#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "moeprism/activation.hpp"
#include "moeprism/error.hpp"
#include "moeprism/gating.hpp"
#include "moeprism/io.hpp"
#include "moeprism/offload.hpp"
#include "moeprism/scheduler.hpp"
#include "moeprism/solver.hpp"

namespace moeprism {

using json = nlohmann::json;

namespace detail {

inline json parse_json_file(const std::filesystem::path& path) {
    std::ifstream in = open_in(path, std::ios::in);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out = open_out(path, std::ios::out | std::ios::trunc);
    out << text;
    if (!out) throw IoError("failed while writing " + path.string());
}

template <typename T>
T require(const json& j, const char* key, const std::string& what) {
    if (!j.contains(key)) {
        throw ValidationError(what + " is missing the '" + std::string(key) + "' field");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError(what + " field '" + std::string(key) + "': " + e.what());
    }
}

}  // namespace detail

// --------------------------------------------------------------------------
// Synthetic profile spec: {"rows", "cols", "quantiles": [[p, q], ...], "seed"}

inline SynthSpec synth_spec_from_json(const json& j) {
    SynthSpec spec;
    spec.rows = detail::require<std::size_t>(j, "rows", "synth spec");
    spec.cols = detail::require<std::size_t>(j, "cols", "synth spec");
    const auto quants = detail::require<json>(j, "quantiles", "synth spec");
    if (!quants.is_array()) throw ValidationError("synth spec 'quantiles' must be an array");
    for (const auto& pair : quants) {
        if (!pair.is_array() || pair.size() != 2) {
            throw ValidationError("each quantile target must be a [probability, magnitude] pair");
        }
        spec.quantiles.emplace_back(pair[0].get<double>(), pair[1].get<double>());
    }
    spec.seed = j.value("seed", std::uint64_t{0});
    validate(spec);
    return spec;
}

inline SynthSpec load_synth_spec(const std::filesystem::path& path) {
    return synth_spec_from_json(detail::parse_json_file(path));
}

// --------------------------------------------------------------------------
// Partition map documents (newline-delimited JSON, one document per expert)

inline json solver_config_to_json(const SolverConfig& cfg) {
    return json{{"n_subexperts", cfg.n_subexperts}, {"k_deact", cfg.k_deact},
                {"t0", cfg.t0},                     {"alpha", cfg.alpha},
                {"iterations", cfg.iterations},     {"seed", cfg.seed}};
}

inline SolverConfig solver_config_from_json(const json& j) {
    SolverConfig cfg;
    cfg.n_subexperts = detail::require<std::uint32_t>(j, "n_subexperts", "solver config");
    cfg.k_deact = detail::require<std::uint32_t>(j, "k_deact", "solver config");
    cfg.t0 = detail::require<double>(j, "t0", "solver config");
    cfg.alpha = detail::require<double>(j, "alpha", "solver config");
    cfg.iterations = detail::require<std::uint64_t>(j, "iterations", "solver config");
    cfg.seed = detail::require<std::uint64_t>(j, "seed", "solver config");
    return cfg;
}

struct PartitionDoc {
    std::uint64_t expert_id = 0;
    SolveResult result;
};

inline json partition_doc_to_json(const PartitionDoc& doc) {
    return json{{"expert_id", doc.expert_id},
                {"n_subexperts", doc.result.partition.n_subexperts},
                {"assignment", doc.result.partition.assignment},
                {"cost", doc.result.cost},
                {"config", solver_config_to_json(doc.result.config)}};
}

inline PartitionDoc partition_doc_from_json(const json& j) {
    PartitionDoc doc;
    doc.expert_id = detail::require<std::uint64_t>(j, "expert_id", "partition map");
    doc.result.partition.n_subexperts =
        detail::require<std::uint32_t>(j, "n_subexperts", "partition map");
    doc.result.partition.assignment =
        detail::require<std::vector<std::uint32_t>>(j, "assignment", "partition map");
    doc.result.cost = detail::require<double>(j, "cost", "partition map");
    doc.result.config = solver_config_from_json(detail::require<json>(j, "config", "partition map"));
    validate(doc.result.partition);
    return doc;
}

// One compact document per line so multi-expert files concatenate.
inline void append_ndjson(const std::filesystem::path& path, const json& doc, bool truncate) {
    std::ofstream out(path, truncate ? std::ios::out | std::ios::trunc
                                     : std::ios::out | std::ios::app);
    if (!out) throw IoError("cannot write " + path.string());
    out << doc.dump() << '\n';
    if (!out) throw IoError("failed while writing " + path.string());
}

inline std::vector<json> read_ndjson(const std::filesystem::path& path) {
    std::ifstream in = detail::open_in(path, std::ios::in);
    std::vector<json> docs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            docs.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (docs.empty()) throw ValidationError(path.string() + " holds no documents");
    return docs;
}

// --------------------------------------------------------------------------
// Gate sets: the partition document plus {"r", "gates": [[...], ...]}

inline json gate_set_to_json(const GateSet& gates) {
    return json{{"r", gates.r}, {"gates", gates.gate_neurons}};
}

inline GateSet gate_set_from_json(const json& j, std::uint32_t n_subexperts) {
    GateSet g;
    g.n_subexperts = n_subexperts;
    g.r = detail::require<std::uint32_t>(j, "r", "gate set");
    g.gate_neurons =
        detail::require<std::vector<std::vector<std::uint32_t>>>(j, "gates", "gate set");
    validate(g);
    return g;
}

// --------------------------------------------------------------------------
// Workload spec:
// {"duration_s", "rate_per_s", "kmin_pmf": {"1": 0.5, ...},
//  "prompt_tokens": {dist}, "output_tokens": {dist}, "seed"}
// dist: {"dist":"constant","value":v} | {"dist":"uniform_int","lo":a,"hi":b}
//     | {"dist":"geometric","p":x}

inline json token_dist_to_json(const TokenDist& d) {
    switch (d.kind) {
        case TokenDist::Kind::constant:
            return json{{"dist", "constant"}, {"value", d.value}};
        case TokenDist::Kind::uniform_int:
            return json{{"dist", "uniform_int"}, {"lo", d.lo}, {"hi", d.hi}};
        case TokenDist::Kind::geometric:
            return json{{"dist", "geometric"}, {"p", d.p}};
    }
    return json{};
}

inline TokenDist token_dist_from_json(const json& j, const std::string& what) {
    TokenDist d;
    const auto kind = detail::require<std::string>(j, "dist", what);
    if (kind == "constant") {
        d.kind = TokenDist::Kind::constant;
        d.value = detail::require<std::uint32_t>(j, "value", what);
    } else if (kind == "uniform_int") {
        d.kind = TokenDist::Kind::uniform_int;
        d.lo = detail::require<std::uint32_t>(j, "lo", what);
        d.hi = detail::require<std::uint32_t>(j, "hi", what);
    } else if (kind == "geometric") {
        d.kind = TokenDist::Kind::geometric;
        d.p = detail::require<double>(j, "p", what);
    } else {
        throw ValidationError(what + " has unknown dist '" + kind +
                              "' (expected constant|uniform_int|geometric)");
    }
    validate(d);
    return d;
}

inline json workload_spec_to_json(const WorkloadSpec& spec) {
    json pmf = json::object();
    for (const auto& [m, p] : spec.kmin_pmf) pmf[std::to_string(m)] = p;
    return json{{"duration_s", spec.duration_s},
                {"rate_per_s", spec.rate_per_s},
                {"kmin_pmf", pmf},
                {"prompt_tokens", token_dist_to_json(spec.prompt_tokens)},
                {"output_tokens", token_dist_to_json(spec.output_tokens)},
                {"seed", spec.seed}};
}

inline WorkloadSpec workload_spec_from_json(const json& j) {
    WorkloadSpec spec;
    spec.duration_s = detail::require<double>(j, "duration_s", "workload spec");
    spec.rate_per_s = detail::require<double>(j, "rate_per_s", "workload spec");
    const auto pmf = detail::require<json>(j, "kmin_pmf", "workload spec");
    if (!pmf.is_object()) throw ValidationError("workload 'kmin_pmf' must be an object");
    for (const auto& [key, value] : pmf.items()) {
        std::uint32_t m = 0;
        try {
            m = static_cast<std::uint32_t>(std::stoul(key));
        } catch (const std::exception&) {
            throw ValidationError("kmin_pmf key '" + key + "' is not a level number");
        }
        spec.kmin_pmf.emplace_back(m, value.get<double>());
    }
    std::sort(spec.kmin_pmf.begin(), spec.kmin_pmf.end());
    spec.prompt_tokens =
        token_dist_from_json(detail::require<json>(j, "prompt_tokens", "workload spec"),
                             "prompt_tokens dist");
    spec.output_tokens =
        token_dist_from_json(detail::require<json>(j, "output_tokens", "workload spec"),
                             "output_tokens dist");
    spec.seed = j.value("seed", std::uint64_t{0});
    validate(spec);
    return spec;
}

inline WorkloadSpec load_workload_spec(const std::filesystem::path& path) {
    return workload_spec_from_json(detail::parse_json_file(path));
}

// --------------------------------------------------------------------------
// Serving reports: JSON aggregates plus a per-request CSV.

inline json sim_report_to_json(const SimReport& report, const SchedulerConfig& cfg) {
    return json{{"policy", policy_name(report.policy)},
                {"requests", report.records.size()},
                {"batches", report.batches},
                {"span_s", report.span_s},
                {"throughput_req_s", report.throughput_req_s},
                {"throughput_tokens_s", report.throughput_tokens_s},
                {"mean_ttft_s", report.mean_ttft_s},
                {"p99_ttft_s", report.p99_ttft_s},
                {"mean_tpot_s", report.mean_tpot_s},
                {"p99_tpot_s", report.p99_tpot_s},
                {"mean_e2e_s", report.mean_e2e_s},
                {"p99_e2e_s", report.p99_e2e_s},
                {"slo_violations", report.slo_violations},
                {"max_batch_latency_s", report.max_batch_latency_s},
                {"config", json{{"m_max", cfg.m_max},
                                {"b_max", cfg.b_max},
                                {"t_max_s", cfg.t_max_s},
                                {"policy", policy_name(cfg.policy)}}}};
}

inline void write_request_records_csv(const SimReport& report,
                                      const std::filesystem::path& path) {
    std::ofstream out = detail::open_out(path, std::ios::out | std::ios::trunc);
    out << "id,arrival_s,dispatch_s,first_token_s,complete_s,k_min,served_m,trigger\n";
    for (const auto& rec : report.records) {
        out << rec.id << ',' << detail::format_double(rec.arrival_s) << ','
            << detail::format_double(rec.dispatch_s) << ','
            << detail::format_double(rec.first_token_s) << ','
            << detail::format_double(rec.complete_s) << ',' << rec.k_min << ','
            << rec.served_level << ',' << trigger_name(rec.trigger) << '\n';
    }
    if (!out) throw IoError("failed while writing " + path.string());
}

// --------------------------------------------------------------------------
// Offload config and report

inline OffloadConfig offload_config_from_json(const json& j) {
    OffloadConfig cfg;
    cfg.n_experts = detail::require<std::uint32_t>(j, "n_experts", "offload config");
    cfg.subexperts_per_expert =
        detail::require<std::uint32_t>(j, "subexperts_per_expert", "offload config");
    cfg.expert_bytes = detail::require<std::uint64_t>(j, "expert_bytes", "offload config");
    cfg.vram_bytes = detail::require<std::uint64_t>(j, "vram_bytes", "offload config");
    cfg.pcie_bytes_per_s = detail::require<double>(j, "pcie_bytes_per_s", "offload config");
    cfg.compute_s_per_subexpert =
        detail::require<double>(j, "compute_s_per_subexpert", "offload config");
    return cfg;
}

inline OffloadConfig load_offload_config(const std::filesystem::path& path) {
    return offload_config_from_json(detail::parse_json_file(path));
}

inline json offload_report_to_json(const OffloadReport& report, const OffloadConfig& cfg,
                                   std::uint64_t seed, double k_equiv, double locality) {
    return json{{"granularity", granularity_name(cfg.granularity)},
                {"steps", report.step_latencies.size()},
                {"total_latency_s", report.total_s},
                {"io_s", report.io_s},
                {"compute_s", report.compute_s},
                {"hit_ratio", report.hit_ratio},
                {"total_misses", report.total_misses},
                {"total_requested", report.total_requested},
                {"capacity_residency", capacity_residency(cfg)},
                {"config", json{{"n_experts", cfg.n_experts},
                                {"subexperts_per_expert", cfg.subexperts_per_expert},
                                {"expert_bytes", cfg.expert_bytes},
                                {"vram_bytes", cfg.vram_bytes},
                                {"pcie_bytes_per_s", cfg.pcie_bytes_per_s},
                                {"compute_s_per_subexpert", cfg.compute_s_per_subexpert},
                                {"k_equiv", k_equiv},
                                {"locality", locality},
                                {"seed", seed}}}};
}

// --------------------------------------------------------------------------
// Routing trace CSV: header "step,unit_id", one row per required unit.

inline void save_routing_trace(const RoutingTrace& trace, const std::filesystem::path& path) {
    validate(trace);
    std::ofstream out = detail::open_out(path, std::ios::out | std::ios::trunc);
    out << "step,unit_id\n";
    for (std::size_t t = 0; t < trace.steps.size(); ++t) {
        for (std::uint32_t id : trace.steps[t]) {
            out << t << ',' << id << '\n';
        }
    }
    if (!out) throw IoError("failed while writing " + path.string());
}

inline RoutingTrace load_routing_trace(const std::filesystem::path& path,
                                       const OffloadConfig& cfg) {
    std::ifstream in = detail::open_in(path, std::ios::in);
    RoutingTrace trace;
    trace.granularity = cfg.granularity;
    trace.n_units = total_units(cfg);
    std::string line;
    std::size_t lineno = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line == "step,unit_id") continue;
        }
        std::istringstream row(line);
        std::uint64_t step = 0;
        std::uint32_t unit = 0;
        char comma = 0;
        if (!(row >> step >> comma >> unit) || comma != ',') {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                  ": expected 'step,unit_id'");
        }
        if (step >= trace.steps.size()) {
            trace.steps.resize(step + 1);
            trace.k_equiv.resize(step + 1, 0.0);
        }
        trace.steps[step].push_back(unit);
    }
    for (std::size_t t = 0; t < trace.steps.size(); ++t) {
        auto& step = trace.steps[t];
        std::sort(step.begin(), step.end());
        step.erase(std::unique(step.begin(), step.end()), step.end());
        trace.k_equiv[t] =
            cfg.granularity == Granularity::monolithic
                ? static_cast<double>(step.size())
                : static_cast<double>(step.size()) / cfg.subexperts_per_expert;
    }
    validate(trace);
    return trace;
}

}  // namespace moeprism
