// polyfeed: batch front-end for learning and evaluating polynomial feedback
// laws. Subcommands: basis-info, train, eval, sweep. Exit codes: 0 success,
// 2 configuration error, 3 numeric failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "polyfeed/driver.hpp"

namespace fs = std::filesystem;
using namespace polyfeed;

namespace {

RunConfig load_config(const std::string& path, int workers_override) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse failure: ") + e.what());
    }
    RunConfig cfg = parse_run_config(j);
    if (workers_override > 0) cfg.workers = workers_override;
    return cfg;
}

double ms_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

void cmd_basis_info(const RunConfig& cfg) {
    ControlProblem problem = build_problem(cfg.problem);
    const IndexSet full =
        enumerate_index_set(cfg.basis.kind, problem.dim, cfg.basis.space_degree);
    const IndexSet filtered = filter_by_B(full, problem.B);
    std::printf("problem:            %s (d=%d, M=%d)\n", problem.name.c_str(), problem.dim,
                problem.control_dim);
    std::printf("index set:          %s, space degree %d\n", to_string(cfg.basis.kind).c_str(),
                cfg.basis.space_degree);
    std::printf("multi-indices:      %d before B-filter, %d after\n", full.size(),
                filtered.size());
    if (cfg.basis.kind == IndexSetKind::HyperbolicCross)
        std::printf("cardinality bound:  %.6g\n",
                    hyperbolic_cross_bound(problem.dim, cfg.basis.space_degree));
    std::printf("time degree:        %d\n", cfg.basis.time_degree);
    std::printf("total parameters:   %d\n", cfg.basis.time_degree * filtered.size());
    std::printf("config hash:        %s\n", config_hash(cfg).c_str());
}

void cmd_train(const RunConfig& cfg, const fs::path& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainOutputs outputs = train_run(cfg);
    fs::create_directories(out_dir);
    write_coefficients_file(out_dir / "coefficients.json", outputs);
    write_iteration_log(out_dir / "iterations.csv", outputs.result, outputs.config_hash);
    write_manifest(out_dir / "manifest.json", cfg, "train", ms_since(t0));
    const auto [count, pct] = support_cardinality(outputs.ansatz.theta_flat());
    std::printf("train: %s after %d iterations, J=%.8g, support %d/%d (%.2f%%)\n",
                outputs.result.stop_reason.c_str(), outputs.result.iterations,
                outputs.result.objective, count, outputs.ansatz.parameter_count(), pct);
    std::printf("train: wrote %s\n", (out_dir / "coefficients.json").string().c_str());
}

void cmd_eval(const RunConfig& cfg, const fs::path& coeff_path, const fs::path& out_dir,
              bool dump_references) {
    const auto t0 = std::chrono::steady_clock::now();
    PolynomialAnsatz ansatz = load_coefficients_file(coeff_path, cfg);
    ReferenceCache cache;
    EvalOutputs outputs = eval_run(cfg, ansatz, &cache);
    fs::create_directories(out_dir);
    if (dump_references) {
        const auto ref_dir = out_dir / "references";
        fs::create_directories(ref_dir);
        for (std::size_t i = 0; i < outputs.train_references.size(); ++i)
            write_open_loop_solution(ref_dir / ("train_" + std::to_string(i)),
                                     outputs.train_references[i]);
        for (std::size_t i = 0; i < outputs.test_references.size(); ++i)
            write_open_loop_solution(ref_dir / ("test_" + std::to_string(i)),
                                     outputs.test_references[i]);
    }
    write_results_csv(out_dir / "results.csv", cfg, outputs);
    write_samples_csv(out_dir / "samples.csv", outputs, config_hash(cfg));
    write_manifest(out_dir / "manifest.json", cfg, "eval", ms_since(t0));
    std::printf("eval: train MNAE_J %.4f%%  MNSE_u %.4f%%  MNSE_y %.4f%%\n",
                100.0 * outputs.train.mnae, 100.0 * outputs.train.mnse_u,
                100.0 * outputs.train.mnse_y);
    std::printf("eval: test  MNAE_J %.4f%%  MNSE_u %.4f%%  MNSE_y %.4f%%\n",
                100.0 * outputs.test.mnae, 100.0 * outputs.test.mnse_u,
                100.0 * outputs.test.mnse_y);
    if (outputs.train.reference_failures + outputs.test.reference_failures > 0)
        std::printf("eval: %d reference solves stopped at the iteration cap\n",
                    outputs.train.reference_failures + outputs.test.reference_failures);
}

void cmd_sweep(const RunConfig& cfg, const std::vector<double>& gammas,
               const std::vector<int>& degrees, const fs::path& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out_dir);
    const auto rows = sweep_run(cfg, gammas, degrees, out_dir);
    detail::write_text_file(out_dir / "sweep.csv", sweep_csv(rows, config_hash(cfg)));
    write_manifest(out_dir / "manifest.json", cfg, "sweep", ms_since(t0));
    int failures = 0;
    for (const auto& row : rows)
        if (row.status != "ok") ++failures;
    std::printf("sweep: %zu cells, %d failed, wrote %s\n", rows.size(), failures,
                (out_dir / "sweep.csv").string().c_str());
    if (failures > 0) throw std::runtime_error("sweep finished with failed cells");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"polynomial feedback law learning"};
    app.require_subcommand(1);

    std::string config_path, coeff_path;
    std::string out_dir = ".";
    int workers = 0;
    std::vector<double> gammas;
    std::vector<int> degrees;
    bool dump_references = false;

    auto add_common = [&](CLI::App* sub, bool needs_out) {
        sub->add_option("--config", config_path, "run configuration JSON")->required();
        sub->add_option("--workers", workers, "worker thread count (overrides POLYFEED_WORKERS)");
        if (needs_out) sub->add_option("--out", out_dir, "output directory");
    };
    CLI::App* info = app.add_subcommand("basis-info", "report index-set cardinalities");
    add_common(info, false);
    CLI::App* train = app.add_subcommand("train", "learn surrogate coefficients");
    add_common(train, true);
    CLI::App* eval = app.add_subcommand("eval", "score coefficients against references");
    add_common(eval, true);
    eval->add_option("--coefficients", coeff_path, "coefficients JSON from train")->required();
    eval->add_flag("--dump-references", dump_references,
                   "write each open-loop reference as CSV + JSON sidecar");
    CLI::App* sweep = app.add_subcommand("sweep", "train/eval over a gamma-degree grid");
    add_common(sweep, true);
    sweep->add_option("--gammas", gammas, "penalty weights")->required()->delimiter(',');
    sweep->add_option("--degrees", degrees, "spatial degrees")->required()->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const RunConfig cfg = load_config(config_path, workers);
        if (info->parsed()) cmd_basis_info(cfg);
        if (train->parsed()) cmd_train(cfg, out_dir);
        if (eval->parsed()) cmd_eval(cfg, coeff_path, out_dir, dump_references);
        if (sweep->parsed()) cmd_sweep(cfg, gammas, degrees, out_dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
