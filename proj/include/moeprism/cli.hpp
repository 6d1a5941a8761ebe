#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "moeprism/activation.hpp"
#include "moeprism/error.hpp"
#include "moeprism/expert.hpp"
#include "moeprism/gating.hpp"
#include "moeprism/io.hpp"
#include "moeprism/offload.hpp"
#include "moeprism/perfmodel.hpp"
#include "moeprism/scheduler.hpp"
#include "moeprism/serde.hpp"
#include "moeprism/solver.hpp"

namespace moeprism::cli {

namespace fs = std::filesystem;

// Exit codes: 0 success, 1 domain/validation error, 2 I/O error.
constexpr int exit_ok = 0;
constexpr int exit_validation = 1;
constexpr int exit_io = 2;

struct ProfileArgs {
    std::string synth_path;
    std::string toy_path;
    std::string inputs_path;
    std::string out_path;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

inline void print_quantile_summary(const ActivationMatrix& m, std::ostream& os) {
    os << "matrix " << m.rows << "x" << m.cols << "\n";
    for (double p : {0.5, 0.75, 0.9, 0.99}) {
        os << "  q" << p << " = " << detail::format_double(empirical_quantile(m, p)) << "\n";
    }
    const auto [mn, mx] = std::minmax_element(m.data.begin(), m.data.end());
    os << "  min = " << detail::format_double(*mn) << ", max = " << detail::format_double(*mx)
       << "\n";
}

inline int cmd_profile(const ProfileArgs& args, std::ostream& os) {
    if (args.out_path.empty()) throw ValidationError("profile needs --out");
    ActivationMatrix m;
    if (!args.synth_path.empty()) {
        SynthSpec spec = load_synth_spec(args.synth_path);
        if (args.seed) spec.seed = *args.seed;
        m = generate_synthetic_activations(spec);
    } else if (!args.toy_path.empty()) {
        if (args.inputs_path.empty()) {
            throw ValidationError("profile --from-toy also needs --inputs");
        }
        const ToyExpert expert = load_toy_expert(args.toy_path);
        const auto raw = detail::read_csv_matrix(args.inputs_path);
        std::vector<std::vector<float>> inputs(raw.rows);
        for (std::size_t b = 0; b < raw.rows; ++b) {
            inputs[b].assign(raw.data.begin() + static_cast<std::ptrdiff_t>(b * raw.cols),
                             raw.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * raw.cols));
        }
        m = collect_activation_matrix(expert, inputs);
    } else {
        throw ValidationError("profile needs either --synth or --from-toy");
    }
    if (matrix_format_for(args.out_path) == MatrixFormat::csv) {
        detail::write_csv_matrix(args.out_path, m.rows, m.cols, m.data);
    } else {
        save_activation_matrix(m, args.out_path);
    }
    if (!args.quiet) print_quantile_summary(m, os);
    return exit_ok;
}

struct PartitionArgs {
    std::string matrix_path;
    std::string out_path;
    std::uint64_t expert_id = 0;
    std::uint32_t n_subexperts = 4;
    std::optional<std::uint32_t> k_deact;
    double t0 = 100.0;
    double alpha = 0.995;
    std::uint64_t iterations = 100000;
    std::uint64_t seed = 0;
    bool oracle = false;
    bool quiet = false;
};

inline int cmd_partition(const PartitionArgs& args, std::ostream& os) {
    if (args.matrix_path.empty() || args.out_path.empty()) {
        throw ValidationError("partition needs --matrix and --out");
    }
    const ActivationMatrix m =
        load_activation_matrix(args.matrix_path, matrix_format_for(args.matrix_path));

    SolverConfig cfg = default_solver_config(args.n_subexperts);
    if (args.k_deact) cfg.k_deact = *args.k_deact;
    cfg.t0 = args.t0;
    cfg.alpha = args.alpha;
    cfg.iterations = args.iterations;
    cfg.seed = args.seed;

    const SolveResult result = solve(m, cfg);
    PartitionDoc doc{args.expert_id, result};
    json out = partition_doc_to_json(doc);

    if (args.oracle) {
        const double count = balanced_partition_count(m.cols, cfg.n_subexperts);
        if (count > 1e6) {
            std::cerr << "warning: oracle skipped, instance has "
                      << detail::format_double(count) << " balanced partitions\n";
        } else {
            const SolveResult exact = brute_force_optimal(m, cfg.n_subexperts, cfg.k_deact);
            out["oracle_cost"] = exact.cost;
            out["oracle_ratio"] = exact.cost > 0.0 ? result.cost / exact.cost
                                                   : (result.cost > 0.0 ? 0.0 : 1.0);
        }
    }
    append_ndjson(args.out_path, out, /*truncate=*/true);
    if (!args.quiet) {
        os << "partitioned " << m.cols << " neurons into " << cfg.n_subexperts
           << " sub-experts, cost " << detail::format_double(result.cost) << "\n";
        if (out.contains("oracle_cost")) {
            os << "oracle cost " << detail::format_double(out["oracle_cost"].get<double>())
               << ", ratio " << detail::format_double(out["oracle_ratio"].get<double>()) << "\n";
        }
    }
    return exit_ok;
}

struct GatesArgs {
    std::string matrix_path;
    std::string partition_path;
    std::string out_path;
    std::uint32_t r = default_gate_neuron_count;
    std::optional<std::size_t> k_a;
    std::optional<std::uint64_t> expert_id;
    bool quiet = false;
};

inline int cmd_gates(const GatesArgs& args, std::ostream& os) {
    if (args.matrix_path.empty() || args.partition_path.empty() || args.out_path.empty()) {
        throw ValidationError("gates needs --matrix, --partition and --out");
    }
    const ActivationMatrix m =
        load_activation_matrix(args.matrix_path, matrix_format_for(args.matrix_path));

    const auto docs = read_ndjson(args.partition_path);
    json chosen;
    if (args.expert_id) {
        for (const auto& d : docs) {
            if (d.value("expert_id", std::uint64_t{0}) == *args.expert_id) {
                chosen = d;
                break;
            }
        }
        if (chosen.is_null()) {
            throw ValidationError("no partition document with expert_id " +
                                  std::to_string(*args.expert_id) + " in " +
                                  args.partition_path);
        }
    } else {
        if (docs.size() > 1) {
            throw ValidationError(args.partition_path +
                                  " holds several documents; pick one with --expert-id");
        }
        chosen = docs.front();
    }
    const PartitionDoc doc = partition_doc_from_json(chosen);
    if (doc.result.partition.assignment.size() != m.cols) {
        throw ValidationError("partition covers " +
                              std::to_string(doc.result.partition.assignment.size()) +
                              " neurons but the matrix has " + std::to_string(m.cols) +
                              " columns");
    }

    const std::size_t k_a = args.k_a ? *args.k_a : default_binarize_count(m.cols);
    const BinaryActivation bin = binarize_topk(m, k_a);
    const CoActivationMatrix co = coactivation(bin);
    const GateSet gates = select_gate_neurons(co, doc.result.partition, args.r);

    json out = chosen;
    out["r"] = gates.r;
    out["gates"] = gates.gate_neurons;
    json fidelity = json::object();
    for (std::uint32_t k = 1; k <= gates.n_subexperts; ++k) {
        fidelity[std::to_string(k)] = gating_fidelity(m, doc.result.partition, gates, k);
    }
    out["fidelity"] = fidelity;
    out["k_a"] = k_a;
    append_ndjson(args.out_path, out, /*truncate=*/true);

    if (!args.quiet) {
        os << "gate neurons per sub-expert: r=" << gates.r << ", k_a=" << k_a << "\n";
        for (std::uint32_t k = 1; k <= gates.n_subexperts; ++k) {
            os << "  recall@" << k << " = "
               << detail::format_double(fidelity[std::to_string(k)].get<double>()) << "\n";
        }
    }
    return exit_ok;
}

struct SimulateServeArgs {
    std::string workload_path;
    std::string policy = "prism";
    std::string perf_path;
    std::string analytic;  // "fixed_s,per_token_s,per_token_per_k_s"
    std::uint32_t b_max = 256;
    double t_max_s = 0.5;
    std::uint32_t m_max = 32;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

inline PerfModel parse_perf_args(const std::string& perf_path, const std::string& analytic) {
    if (!perf_path.empty() && !analytic.empty()) {
        throw ValidationError("pass either --perf or --analytic, not both");
    }
    if (!perf_path.empty()) return load_perf_table(perf_path);
    if (!analytic.empty()) {
        AnalyticPerf p;
        std::istringstream in(analytic);
        char c1 = 0, c2 = 0;
        if (!(in >> p.fixed_s >> c1 >> p.per_token_s >> c2 >> p.per_token_per_k_s) ||
            c1 != ',' || c2 != ',') {
            throw ValidationError("--analytic expects 'fixed_s,per_token_s,per_token_per_k_s'");
        }
        validate(p);
        return p;
    }
    throw ValidationError("simulate-serve needs --perf or --analytic");
}

inline int cmd_simulate_serve(const SimulateServeArgs& args, std::ostream& os) {
    if (args.workload_path.empty() || args.out_dir.empty()) {
        throw ValidationError("simulate-serve needs --workload and --out");
    }
    WorkloadSpec spec = load_workload_spec(args.workload_path);
    if (args.seed) spec.seed = *args.seed;
    const PerfModel perf = parse_perf_args(args.perf_path, args.analytic);

    SchedulerConfig cfg;
    cfg.policy = parse_policy(args.policy);
    cfg.b_max = args.b_max;
    cfg.t_max_s = args.t_max_s;
    cfg.m_max = args.m_max;
    validate(cfg);

    const std::vector<Request> workload = generate_workload(spec);
    const SimReport report = run_simulation(workload, cfg, perf);

    std::error_code ec;
    fs::create_directories(args.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + args.out_dir);
    detail::write_text_file(fs::path(args.out_dir) / "report.json",
                            sim_report_to_json(report, cfg).dump(2) + "\n");
    write_request_records_csv(report, fs::path(args.out_dir) / "requests.csv");

    if (!args.quiet) {
        os << policy_name(cfg.policy) << ": " << report.records.size() << " requests, "
           << detail::format_double(report.throughput_tokens_s) << " tokens/s, mean TTFT "
           << detail::format_double(report.mean_ttft_s) << " s, violations "
           << report.slo_violations << "\n";
    }
    return exit_ok;
}

struct SimulateOffloadArgs {
    std::string config_path;
    std::uint64_t steps = 512;
    double k_equiv = 4.2;
    double locality = 0.6;
    std::string granularity = "fine";
    std::uint64_t seed = 0;
    std::string out_path;
    std::string trace_path;         // external trace, skips generation
    std::string export_trace_path;  // dump the trace actually used
    bool quiet = false;
};

inline int cmd_simulate_offload(const SimulateOffloadArgs& args, std::ostream& os) {
    if (args.config_path.empty() || args.out_path.empty()) {
        throw ValidationError("simulate-offload needs --config and --out");
    }
    OffloadConfig cfg = load_offload_config(args.config_path);
    cfg.granularity = parse_granularity(args.granularity);
    validate(cfg);

    RoutingTrace trace;
    if (!args.trace_path.empty()) {
        trace = load_routing_trace(args.trace_path, cfg);
    } else {
        trace = generate_routing_trace(args.steps, args.k_equiv, args.locality, cfg, args.seed);
    }
    if (!args.export_trace_path.empty()) save_routing_trace(trace, args.export_trace_path);

    const OffloadReport report = run_offload_sim(trace, cfg);
    detail::write_text_file(
        args.out_path,
        offload_report_to_json(report, cfg, args.seed, args.k_equiv, args.locality).dump(2) +
            "\n");
    if (!args.quiet) {
        os << granularity_name(cfg.granularity) << ": total "
           << detail::format_double(report.total_s) << " s over " << trace.steps.size()
           << " steps, hit ratio " << detail::format_double(report.hit_ratio) << "\n";
    }
    return exit_ok;
}

struct ReportArgs {
    std::vector<std::string> inputs;
    std::string out_base;
    bool quiet = false;
};

inline int cmd_report(const ReportArgs& args, std::ostream& os) {
    if (args.inputs.empty()) throw ValidationError("report needs at least one input file");
    if (args.out_base.empty()) throw ValidationError("report needs --out");

    std::vector<json> docs;
    for (const auto& path : args.inputs) {
        docs.push_back(detail::parse_json_file(path));
    }
    const bool serve = docs.front().contains("policy");
    for (const auto& d : docs) {
        if (d.contains("policy") != serve) {
            throw ValidationError("cannot mix serving and offload reports in one table");
        }
    }

    std::ostringstream csv;
    json summary = json::array();
    if (serve) {
        csv << "policy,requests,throughput_req_s,throughput_tokens_s,mean_ttft_s,p99_ttft_s,"
               "mean_tpot_s,p99_tpot_s,mean_e2e_s,p99_e2e_s,slo_violations\n";
        for (const auto& d : docs) {
            for (const char* key :
                 {"policy", "requests", "throughput_req_s", "throughput_tokens_s", "mean_ttft_s",
                  "p99_ttft_s", "mean_tpot_s", "p99_tpot_s", "mean_e2e_s", "p99_e2e_s",
                  "slo_violations"}) {
                if (!d.contains(key)) {
                    throw ValidationError("serving report is missing '" + std::string(key) + "'");
                }
            }
            csv << d["policy"].get<std::string>() << ',' << d["requests"] << ','
                << detail::format_double(d["throughput_req_s"].get<double>()) << ','
                << detail::format_double(d["throughput_tokens_s"].get<double>()) << ','
                << detail::format_double(d["mean_ttft_s"].get<double>()) << ','
                << detail::format_double(d["p99_ttft_s"].get<double>()) << ','
                << detail::format_double(d["mean_tpot_s"].get<double>()) << ','
                << detail::format_double(d["p99_tpot_s"].get<double>()) << ','
                << detail::format_double(d["mean_e2e_s"].get<double>()) << ','
                << detail::format_double(d["p99_e2e_s"].get<double>()) << ','
                << d["slo_violations"] << '\n';
            summary.push_back(d);
        }
    } else {
        csv << "granularity,steps,total_latency_s,io_s,compute_s,hit_ratio,total_misses\n";
        double fine_total = 0.0, mono_total = 0.0;
        std::size_t fine_seen = 0, mono_seen = 0;
        for (const auto& d : docs) {
            for (const char* key : {"granularity", "steps", "total_latency_s", "io_s",
                                    "compute_s", "hit_ratio", "total_misses"}) {
                if (!d.contains(key)) {
                    throw ValidationError("offload report is missing '" + std::string(key) + "'");
                }
            }
            const auto g = d["granularity"].get<std::string>();
            csv << g << ',' << d["steps"] << ','
                << detail::format_double(d["total_latency_s"].get<double>()) << ','
                << detail::format_double(d["io_s"].get<double>()) << ','
                << detail::format_double(d["compute_s"].get<double>()) << ','
                << detail::format_double(d["hit_ratio"].get<double>()) << ','
                << d["total_misses"] << '\n';
            if (g == "fine") {
                fine_total += d["total_latency_s"].get<double>();
                ++fine_seen;
            } else {
                mono_total += d["total_latency_s"].get<double>();
                ++mono_seen;
            }
            summary.push_back(d);
        }
        if (fine_seen > 0 && mono_seen > 0 && mono_total > 0.0) {
            json ratio = json::object();
            ratio["latency_ratio_fine_over_monolithic"] =
                (fine_total / fine_seen) / (mono_total / mono_seen);
            summary.push_back(ratio);
        }
    }

    detail::write_text_file(args.out_base + ".csv", csv.str());
    detail::write_text_file(args.out_base + ".json", summary.dump(2) + "\n");
    if (!args.quiet) os << csv.str();
    return exit_ok;
}

// ---------------------------------------------------------------------------

inline int run_cli(std::vector<std::string> args, std::ostream& os = std::cout) {
    CLI::App app{"desk-scale MoE elasticity pipeline: partition experts, rebuild gates, "
                 "simulate QoS-aware serving and offloading"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand
    bool quiet = false;
    app.add_flag("--quiet", quiet, "suppress progress output");

    ProfileArgs profile;
    auto* p = app.add_subcommand("profile", "produce an activation matrix");
    p->add_option("--synth", profile.synth_path, "synthetic profile spec (JSON)");
    p->add_option("--from-toy", profile.toy_path, "toy expert file (MPEX)");
    p->add_option("--inputs", profile.inputs_path, "calibration inputs (CSV, one row per token)");
    p->add_option("--out", profile.out_path, "output matrix path (.mpam or .csv)")->required();
    std::uint64_t profile_seed = 0;
    auto* profile_seed_opt = p->add_option("--seed", profile_seed, "override the spec seed");

    PartitionArgs part;
    auto* pa = app.add_subcommand("partition", "solve the balanced neuron partition");
    pa->add_option("--matrix", part.matrix_path, "activation matrix (.mpam or .csv)")->required();
    pa->add_option("--n", part.n_subexperts, "sub-experts per expert")->capture_default_str();
    std::uint32_t part_k = 0;
    auto* part_k_opt = pa->add_option("--k-deact", part_k, "de-activated count in the objective "
                                                           "(default floor(N/2))");
    pa->add_option("--t0", part.t0, "initial temperature")->capture_default_str();
    pa->add_option("--alpha", part.alpha, "cooling rate")->capture_default_str();
    pa->add_option("--iterations", part.iterations, "annealing steps")->capture_default_str();
    pa->add_option("--seed", part.seed, "solver seed")->capture_default_str();
    pa->add_option("--expert-id", part.expert_id, "expert id recorded in the map");
    pa->add_flag("--oracle", part.oracle, "also run the exhaustive oracle when feasible");
    pa->add_option("--out", part.out_path, "partition map output (JSON)")->required();

    GatesArgs gates;
    auto* g = app.add_subcommand("gates", "select gate neurons and score fidelity");
    g->add_option("--matrix", gates.matrix_path, "activation matrix")->required();
    g->add_option("--partition", gates.partition_path, "partition map (JSON)")->required();
    g->add_option("--r", gates.r, "gate neurons per sub-expert")->capture_default_str();
    std::size_t gates_ka = 0;
    auto* gates_ka_opt = g->add_option("--k-a", gates_ka,
                                       "active neurons per token (default round(0.75*C))");
    std::uint64_t gates_expert = 0;
    auto* gates_expert_opt = g->add_option("--expert-id", gates_expert,
                                           "document to use from a multi-expert map");
    g->add_option("--out", gates.out_path, "gate set output (JSON)")->required();

    SimulateServeArgs serve;
    auto* s = app.add_subcommand("simulate-serve", "run the serving simulation");
    s->add_option("--workload", serve.workload_path, "workload spec (JSON)")->required();
    s->add_option("--policy", serve.policy, "prism|fifo|fullbatch")->capture_default_str();
    s->add_option("--perf", serve.perf_path, "perf table (CSV)");
    s->add_option("--analytic", serve.analytic, "analytic perf 'fixed,per_req,per_req_per_k'");
    s->add_option("--bmax", serve.b_max, "maximum batch size")->capture_default_str();
    s->add_option("--tmax", serve.t_max_s, "timeout threshold seconds")->capture_default_str();
    s->add_option("--mmax", serve.m_max, "quality levels")->capture_default_str();
    s->add_option("--out", serve.out_dir, "report directory")->required();
    std::uint64_t serve_seed = 0;
    auto* serve_seed_opt = s->add_option("--seed", serve_seed, "override the workload seed");

    SimulateOffloadArgs off;
    auto* o = app.add_subcommand("simulate-offload", "run the offloading simulation");
    o->add_option("--config", off.config_path, "offload config (JSON)")->required();
    o->add_option("--steps", off.steps, "generation steps")->capture_default_str();
    o->add_option("--k-equiv", off.k_equiv, "fractional expert demand per step")
        ->capture_default_str();
    o->add_option("--locality", off.locality, "per-unit reuse probability")->capture_default_str();
    o->add_option("--granularity", off.granularity, "fine|monolithic")->capture_default_str();
    o->add_option("--seed", off.seed, "trace seed")->capture_default_str();
    o->add_option("--trace", off.trace_path, "external trace CSV (skips generation)");
    o->add_option("--export-trace", off.export_trace_path, "write the trace used (CSV)");
    o->add_option("--out", off.out_path, "report output (JSON)")->required();

    ReportArgs rep;
    auto* r = app.add_subcommand("report", "tabulate one or more simulation reports");
    r->add_option("inputs", rep.inputs, "report JSON files");
    r->add_option("--out", rep.out_base, "output base path (.csv and .json)")->required();

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*p) {
            profile.quiet = quiet;
            if (*profile_seed_opt) profile.seed = profile_seed;
            return cmd_profile(profile, os);
        }
        if (*pa) {
            part.quiet = quiet;
            if (*part_k_opt) part.k_deact = part_k;
            return cmd_partition(part, os);
        }
        if (*g) {
            gates.quiet = quiet;
            if (*gates_ka_opt) gates.k_a = gates_ka;
            if (*gates_expert_opt) gates.expert_id = gates_expert;
            return cmd_gates(gates, os);
        }
        if (*s) {
            serve.quiet = quiet;
            if (*serve_seed_opt) serve.seed = serve_seed;
            return cmd_simulate_serve(serve, os);
        }
        if (*o) {
            off.quiet = quiet;
            return cmd_simulate_offload(off, os);
        }
        if (*r) {
            rep.quiet = quiet;
            return cmd_report(rep, os);
        }
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_io;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_validation;
    }
    return exit_ok;
}

}  // namespace moeprism::cli
