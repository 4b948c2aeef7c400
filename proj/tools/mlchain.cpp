// mlchain: verify problem files, generate and run benchmark instances, and
// check model encodings.
//
// Exit codes: 0 Optimal/Feasible (or bounds only), 1 Infeasible,
// 2 TimeLimit/GapLimit, 3 input error, 4 internal error.

#include "mlchain/bench.hpp"
#include "mlchain/errors.hpp"
#include "mlchain/io.hpp"
#include "mlchain/verifier.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

using namespace mlchain;
using io::Json;

namespace {

constexpr int kExitInput = 3;
constexpr int kExitInternal = 4;

int exit_code(VerificationStatus s) {
    switch (s) {
    case VerificationStatus::Optimal:
    case VerificationStatus::Feasible:
    case VerificationStatus::BoundsOnly: return 0;
    case VerificationStatus::Infeasible: return 1;
    case VerificationStatus::TimeLimit:
    case VerificationStatus::GapLimit: return 2;
    }
    return kExitInternal;
}

void emit(const Json& j, const std::string& json_out) {
    std::cout << j.dump(2) << '\n';
    if (!json_out.empty()) io::write_json(j, json_out);
}

Json error_report(const std::string& status, const std::string& message, const Json& config) {
    Json j = Json::object();
    j["format"] = "mlchain-report";
    j["version"] = io::kFormatVersion;
    j["status"] = status;
    j["message"] = message;
    j["config"] = config;
    return j;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        const int v = std::stoi(item, &used);
        if (used != item.size() || v <= 0) throw InvalidInput("expected a comma-separated list of positive integers: " + s);
        out.push_back(v);
    }
    return out;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// -- verify -----------------------------------------------------------------

struct VerifyArgs {
    std::string problem;
    std::string sense;
    double gap = 1e-4;
    double time_limit = std::numeric_limits<double>::infinity();
    bool bounds_only = false;
    std::string ablate;
    std::uint64_t seed = 0;
    std::string json_out;
    std::string dump_lp;
    bool dump_lp_set = false;
    int segments = 8;
    double epsilon = 1e-6;
};

int run_verify(const VerifyArgs& a) {
    Json config = Json::object();
    config["command"] = "verify";
    config["problem"] = a.problem;
    config["sense"] = a.sense.empty() ? Json(nullptr) : Json(a.sense);
    config["gap"] = a.gap;
    config["time_limit"] = std::isfinite(a.time_limit) ? Json(a.time_limit) : Json(nullptr);
    config["bounds_only"] = a.bounds_only;
    config["ablate"] = a.ablate.empty() ? Json(nullptr) : Json(a.ablate);
    config["seed"] = a.seed;
    config["segments"] = a.segments;
    config["epsilon"] = a.epsilon;
    try {
        const MarkovProcessSpec spec = io::load_problem(a.problem);
        VerifyOptions o;
        if (!a.sense.empty()) o.sense = query_sense_from_string(a.sense);
        o.rel_gap = a.gap;
        o.time_limit = a.time_limit;
        o.bounds_only = a.bounds_only;
        if (!a.ablate.empty()) o.ablate = stage_from_string(a.ablate);
        o.encode.segments = a.segments;
        o.epsilon = a.epsilon;
        if (a.dump_lp_set)
            o.dump_lp_path = a.dump_lp.empty() ? std::filesystem::path(a.problem).stem().string() + ".lp" : a.dump_lp;
        const VerificationResult r = verify(spec, o);
        emit(io::report_to_json(r, config), a.json_out);
        return exit_code(r.status);
    } catch (const NumericalFailure& e) {
        std::cerr << "mlchain: numerical failure: " << e.what() << '\n';
        emit(error_report("InternalError", e.what(), config), a.json_out);
        return kExitInternal;
    } catch (const InternalConsistencyError& e) {
        std::cerr << "mlchain: internal error: " << e.what() << '\n';
        emit(error_report("InternalError", e.what(), config), a.json_out);
        return kExitInternal;
    } catch (const Error& e) {
        std::cerr << "mlchain: " << e.what() << '\n';
        emit(error_report("InputError", e.what(), config), a.json_out);
        return kExitInput;
    }
}

// -- bench ------------------------------------------------------------------

struct BenchArgs {
    int states = 5;
    int rows = 1;
    std::string family;
    std::string reward = "linear";
    std::string initial = "linear";
    std::string transition = "linear";
    int depth = 4;
    std::string hidden = "5";
    int instances = 10;
    int samples = 10000;
    std::uint64_t seed = 1;
    std::string out_dir;
    std::vector<std::string> ablate;
    double time_limit = 300.0;
    double gap = 1e-4;
    bool grid = false;
    std::string sense = "max";
    std::string json_out;
    bool generate_only = false;
};

int run_bench(const BenchArgs& a) {
    bench::InstanceConfig cfg;
    std::vector<std::pair<std::string, std::optional<Stage>>> variants{{"full", std::nullopt}};
    try {
        cfg.states = a.states;
        cfg.modeled_rows = a.rows;
        cfg.reward = bench::family_from_string(a.family.empty() ? a.reward : a.family);
        cfg.initial = bench::family_from_string(a.family.empty() ? a.initial : a.family);
        cfg.transition = bench::family_from_string(a.family.empty() ? a.transition : a.family);
        cfg.tree_depth = a.depth;
        cfg.hidden = parse_int_list(a.hidden);
        cfg.samples = a.samples;
        cfg.integer_grid = a.grid;
        cfg.sense = query_sense_from_string(a.sense);
        for (const std::string& s : a.ablate) variants.emplace_back("ablate-" + s, stage_from_string(s));
    } catch (const std::exception& e) {
        std::cerr << "mlchain bench: " << e.what() << '\n';
        return kExitInput;
    }

    Json rows = Json::array();
    std::printf("%-4s %-20s %-16s %-11s %16s %10s %10s\n", "inst", "seed", "variant", "status", "value", "seconds",
                "nodes");
    std::map<std::string, std::vector<double>> times;
    int errors = 0;
    for (int k = 0; k < a.instances; ++k) {
        const std::uint64_t seed = bench::instance_seed(a.seed, k);
        MarkovProcessSpec spec;
        try {
            spec = bench::make_instance(cfg, seed);
        } catch (const Error& e) {
            std::cerr << "mlchain bench: " << e.what() << '\n';
            return kExitInput;
        }
        if (!a.out_dir.empty()) bench::write_instance(spec, a.out_dir, "instance" + std::to_string(k));
        if (a.generate_only) continue;
        for (const auto& [name, stage] : variants) {
            VerifyOptions o;
            o.rel_gap = a.gap;
            o.time_limit = a.time_limit;
            Json row = Json::object();
            row["instance"] = k;
            row["seed"] = seed;
            row["variant"] = name;
            const auto t0 = std::chrono::steady_clock::now();
            try {
                const VerificationResult r = stage ? ablation_run(spec, {*stage}, o) : verify(spec, o);
                const double secs = seconds_since(t0);
                row["status"] = to_string(r.status);
                row["value"] = std::isfinite(r.value) ? Json(r.value) : Json(nullptr);
                row["bound"] = std::isfinite(r.bound) ? Json(r.bound) : Json(nullptr);
                row["seconds"] = secs;
                row["nodes"] = r.stats.nodes;
                times[name].push_back(secs);
                std::printf("%-4d %-20llu %-16s %-11s %16.8g %10.3f %10lld\n", k,
                            static_cast<unsigned long long>(seed), name.c_str(), to_string(r.status), r.value, secs,
                            static_cast<long long>(r.stats.nodes));
            } catch (const Error& e) {
                ++errors;
                row["status"] = "Error";
                row["message"] = e.what();
                std::printf("%-4d %-20llu %-16s %-11s  %s\n", k, static_cast<unsigned long long>(seed), name.c_str(),
                            "Error", e.what());
            }
            std::fflush(stdout);
            rows.push_back(row);
        }
    }
    Json summary = Json::object();
    for (const auto& [name, ts] : times) {
        double log_sum = 0.0;
        for (double t : ts) log_sum += std::log(std::max(t, 1e-6));
        summary[name] = {{"runs", ts.size()}, {"geomean_seconds", std::exp(log_sum / static_cast<double>(ts.size()))}};
        std::printf("geomean %-16s %10.4f s over %zu runs\n", name.c_str(), summary[name]["geomean_seconds"].get<double>(),
                    ts.size());
    }
    if (!a.json_out.empty()) {
        Json j = Json::object();
        j["format"] = "mlchain-bench";
        j["version"] = io::kFormatVersion;
        j["config"] = {{"states", a.states},
                       {"rows", a.rows},
                       {"reward", to_string(cfg.reward)},
                       {"initial", to_string(cfg.initial)},
                       {"transition", to_string(cfg.transition)},
                       {"depth", a.depth},
                       {"hidden", cfg.hidden},
                       {"instances", a.instances},
                       {"samples", a.samples},
                       {"seed", a.seed},
                       {"grid", a.grid},
                       {"sense", a.sense},
                       {"time_limit", a.time_limit},
                       {"gap", a.gap}};
        j["runs"] = rows;
        j["summary"] = summary;
        io::write_json(j, a.json_out);
    }
    return errors ? kExitInternal : 0;
}

// -- check-model ------------------------------------------------------------

struct CheckArgs {
    std::string model;
    int samples = 100;
    std::uint64_t seed = 1;
    double lower = -1.0;
    double upper = 1.0;
    int segments = 8;
    std::string json_out;
};

int run_check(const CheckArgs& a) {
    try {
        const ModelArtifact m = io::load_model(a.model);
        if (!(a.lower <= a.upper)) throw InvalidInput("--lower exceeds --upper");
        const FeatureSet box = FeatureSet::box(Eigen::VectorXd::Constant(m.n_features(), a.lower),
                                               Eigen::VectorXd::Constant(m.n_features(), a.upper));
        EncodeOptions eo;
        eo.segments = a.segments;
        const bench::FidelityReport rep = bench::check_model(m, box, a.samples, a.seed, eo);
        Json j = Json::object();
        j["format"] = "mlchain-fidelity";
        j["version"] = io::kFormatVersion;
        j["model"] = a.model;
        j["kind"] = to_string(m.kind());
        j["samples"] = rep.samples;
        j["near_threshold_redraws"] = rep.near_threshold;
        j["max_deviation"] = rep.max_deviation;
        j["approximate"] = rep.approximate;
        j["envelope_gap"] = rep.envelope_gap;
        j["tolerance"] = rep.tolerance;
        j["passed"] = rep.passed();
        j["config"] = {{"lower", a.lower}, {"upper", a.upper}, {"segments", a.segments}, {"seed", a.seed}};
        emit(j, a.json_out);
        return rep.passed() ? 0 : 1;
    } catch (const Error& e) {
        std::cerr << "mlchain check-model: " << e.what() << '\n';
        return kExitInput;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Verification of Markov processes whose parameters come from ML models"};
    app.require_subcommand(1);

    VerifyArgs va;
    auto* verify_cmd = app.add_subcommand("verify", "Verify a problem file and print a JSON report");
    verify_cmd->add_option("problem", va.problem, "Problem file (JSON)")->required();
    verify_cmd->add_option("--sense", va.sense, "Override the query sense")->check(CLI::IsMember({"min", "max"}));
    verify_cmd->add_option("--gap", va.gap, "Relative optimality gap")->check(CLI::NonNegativeNumber);
    verify_cmd->add_option("--time-limit", va.time_limit, "Seconds")->check(CLI::PositiveNumber);
    verify_cmd->add_flag("--bounds-only", va.bounds_only, "Run the bound stages and skip the final solve");
    verify_cmd->add_option("--ablate", va.ablate, "Disable this stage and all later ones")
        ->check(CLI::IsMember({"theta", "affine", "v-init", "v-tighten"}));
    verify_cmd->add_option("--seed", va.seed, "Recorded in the report; verification itself is deterministic");
    verify_cmd->add_option("--json-out", va.json_out, "Also write the report here");
    auto* dump = verify_cmd->add_option("--debug-dump-lp", va.dump_lp, "Write the final program in LP format")
                     ->expected(0, 1);
    verify_cmd->add_option("--segments", va.segments, "Sigmoid envelope segments")->check(CLI::PositiveNumber);
    verify_cmd->add_option("--epsilon", va.epsilon, "Substochastic offset")->check(CLI::PositiveNumber);

    BenchArgs ba;
    auto* bench_cmd = app.add_subcommand("bench", "Generate birth-process instances and time verify on them");
    bench_cmd->add_option("--states", ba.states, "Number of states")->check(CLI::Range(2, 100000));
    bench_cmd->add_option("--rows", ba.rows, "Rows of P with a classifier");
    bench_cmd->add_option("--family", ba.family, "Model family for every role (linear, tree, mlp)");
    bench_cmd->add_option("--reward", ba.reward, "Model family for r");
    bench_cmd->add_option("--initial", ba.initial, "Model family for pi");
    bench_cmd->add_option("--transition", ba.transition, "Model family for the rows of P");
    bench_cmd->add_option("--depth", ba.depth, "Tree depth");
    bench_cmd->add_option("--hidden", ba.hidden, "Hidden layer widths, e.g. 10,10");
    bench_cmd->add_option("--instances", ba.instances, "Number of instances")->check(CLI::NonNegativeNumber);
    bench_cmd->add_option("--samples", ba.samples, "Training points per model")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--seed", ba.seed, "Base seed");
    bench_cmd->add_option("--out-dir", ba.out_dir, "Write instance and model files here");
    bench_cmd->add_option("--ablate", ba.ablate, "Also run with this stage (and later ones) disabled; repeatable")
        ->check(CLI::IsMember({"theta", "affine", "v-init", "v-tighten"}));
    bench_cmd->add_option("--time-limit", ba.time_limit, "Seconds per run")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--gap", ba.gap, "Relative optimality gap")->check(CLI::NonNegativeNumber);
    bench_cmd->add_flag("--grid", ba.grid, "Restrict features to the integers {-1, 0, 1}");
    bench_cmd->add_option("--sense", ba.sense, "Query sense")->check(CLI::IsMember({"min", "max"}));
    bench_cmd->add_option("--json-out", ba.json_out, "Write the results table as JSON");
    bench_cmd->add_flag("--generate-only", ba.generate_only, "Write instances without solving them");

    CheckArgs ca;
    auto* check_cmd = app.add_subcommand("check-model", "Compare a model's MILP encoding with its evaluator");
    check_cmd->add_option("model", ca.model, "Model file (JSON)")->required();
    check_cmd->add_option("--samples", ca.samples, "Sample points")->check(CLI::PositiveNumber);
    check_cmd->add_option("--seed", ca.seed, "Sampling seed");
    check_cmd->add_option("--lower", ca.lower, "Lower bound of every feature");
    check_cmd->add_option("--upper", ca.upper, "Upper bound of every feature");
    check_cmd->add_option("--segments", ca.segments, "Sigmoid envelope segments")->check(CLI::PositiveNumber);
    check_cmd->add_option("--json-out", ca.json_out, "Also write the report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInput;
    }
    va.dump_lp_set = dump->count() > 0;

    try {
        if (*verify_cmd) return run_verify(va);
        if (*bench_cmd) return run_bench(ba);
        if (*check_cmd) return run_check(ca);
    } catch (const std::exception& e) {
        std::cerr << "mlchain: " << e.what() << '\n';
        return kExitInternal;
    }
    return kExitInput;
}
