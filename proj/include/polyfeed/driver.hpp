#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>

#include "polyfeed/adjoint.hpp"
#include "polyfeed/config.hpp"
#include "polyfeed/report.hpp"
#include "polyfeed/version.hpp"

namespace polyfeed {

namespace detail {

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

}  // namespace detail

struct TrainOutputs {
    RunConfig config;
    PolynomialAnsatz ansatz;
    OptimizeResult result;
    std::string config_hash;
    std::string basis_hash;
};

inline PolynomialAnsatz make_config_ansatz(const RunConfig& cfg, const ControlProblem& p) {
    PolynomialAnsatz a = make_ansatz(cfg.basis.kind, cfg.basis.space_degree,
                                     cfg.basis.time_degree, p.B, p.space_scale, p.T);
    if (a.basis_size() == 0)
        throw ConfigError("basis: the B-filter removed every monomial (no controllable terms)");
    return a;
}

/// Trains the surrogate on the configured problem: Monte Carlo objective over
/// the train samples, proximal/BB optimizer, best iterate kept.
inline TrainOutputs train_run(const RunConfig& cfg) {
    ControlProblem problem = build_problem(cfg.problem);
    TrainOutputs out{cfg, make_config_ansatz(cfg, problem), {}, config_hash(cfg),
                     basis_compat_hash(cfg, problem)};
    const auto samples = sample_initial_conditions(problem, cfg.train_size, cfg.train_seed);
    PolynomialAnsatz& ansatz = out.ansatz;
    const int steps = problem.default_steps;
    const int workers = cfg.workers;
    auto value_fn = [&](const Vec& th) {
        ansatz.set_theta_flat(th);
        return objective_value(make_feedback_law(problem, ansatz), samples, steps, workers);
    };
    auto grad_fn = [&](const Vec& th) {
        ansatz.set_theta_flat(th);
        auto og = objective_and_gradient(make_feedback_law(problem, ansatz), samples, steps,
                                         workers);
        return std::make_pair(og.value, og.grad_flat);
    };
    out.result = optimize(Vec(ansatz.parameter_count(), 0.0), value_fn, grad_fn, cfg.optimizer);
    ansatz.set_theta_flat(out.result.theta);
    return out;
}

/// Memoized open-loop reference solutions keyed by problem, sample and grid.
class ReferenceCache {
public:
    const OpenLoopSolution& lookup(const std::string& key,
                                   const std::function<OpenLoopSolution()>& solve) {
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = map_.find(key);
            if (it != map_.end()) return *it->second;
        }
        auto sol = std::make_shared<OpenLoopSolution>(solve());
        std::lock_guard<std::mutex> lock(mu_);
        auto [it, inserted] = map_.emplace(key, std::move(sol));
        (void)inserted;
        return *it->second;
    }

private:
    std::mutex mu_;
    std::map<std::string, std::shared_ptr<OpenLoopSolution>> map_;
};

inline std::string reference_key(const std::string& problem_hash, double t0, const Vec& y0,
                                 int steps) {
    std::string bytes = problem_hash;
    auto push = [&bytes](double v) {
        const char* p = reinterpret_cast<const char*>(&v);
        bytes.append(p, p + sizeof v);
    };
    push(t0);
    for (double v : y0) push(v);
    push(static_cast<double>(steps));
    return hex64(fnv1a(bytes));
}

/// Rolls out the feedback on every sample, solves (or reuses) the open-loop
/// references on the same grids, and aggregates the error metrics.
inline EvaluationResult evaluate_feedback(const ControlProblem& problem,
                                          const PolynomialAnsatz& ansatz,
                                          const std::vector<std::pair<double, Vec>>& samples,
                                          int steps, const OpenLoopConfig& ol_cfg, int workers,
                                          ReferenceCache* cache, const std::string& problem_hash,
                                          std::vector<OpenLoopSolution>* references_out = nullptr) {
    const std::size_t n = samples.size();
    std::vector<Trajectory> fb(n);
    std::vector<OpenLoopSolution> refs(n);
    parallel_for(n, workers, [&](std::size_t i) {
        const auto& [t0, y0] = samples[i];
        const TimeGrid grid(t0, problem.T, steps);
        fb[i] = rollout(make_feedback_law(problem, ansatz), grid, y0);
        auto solve = [&]() { return solve_open_loop(problem, grid, y0, {}, ol_cfg); };
        if (cache)
            refs[i] = cache->lookup(reference_key(problem_hash, t0, y0, steps), solve);
        else
            refs[i] = solve();
    });
    EvaluationResult res;
    std::vector<SeriesPair> control_pairs, state_pairs;
    std::vector<std::pair<double, double>> costs;
    for (std::size_t i = 0; i < n; ++i) {
        res.j_reference.push_back(refs[i].cost);
        res.j_feedback.push_back(fb[i].total_cost());
        if (!refs[i].converged) ++res.reference_failures;
        costs.emplace_back(refs[i].cost, fb[i].total_cost());
        control_pairs.push_back({&fb[i].grid, &refs[i].trajectory.controls, &fb[i].controls});
        state_pairs.push_back({&fb[i].grid, &refs[i].trajectory.states, &fb[i].states});
    }
    res.mnae = mnae_j(costs);
    res.mnse_u = mnse(control_pairs);
    res.mnse_y = mnse(state_pairs);
    std::tie(res.support_count, res.support_pct) = support_cardinality(ansatz.theta_flat());
    if (references_out) *references_out = std::move(refs);
    return res;
}

struct EvalOutputs {
    EvaluationResult train;
    EvaluationResult test;
    std::vector<OpenLoopSolution> train_references;
    std::vector<OpenLoopSolution> test_references;
};

inline EvalOutputs eval_run(const RunConfig& cfg, const PolynomialAnsatz& ansatz,
                            ReferenceCache* cache = nullptr) {
    ControlProblem problem = build_problem(cfg.problem);
    const int steps = cfg.problem.eval_N_t > 0 ? cfg.problem.eval_N_t : problem.default_steps;
    const std::string phash =
        hex64(fnv1a(config_to_json(cfg)["problem"].dump() + "|" + std::to_string(steps) + "|" +
                    std::to_string(cfg.open_loop.tol) + "|" +
                    std::to_string(cfg.open_loop.max_iters)));
    EvalOutputs out;
    const auto train_samples = sample_initial_conditions(problem, cfg.train_size, cfg.train_seed);
    const auto test_samples = sample_initial_conditions(problem, cfg.test_size, cfg.test_seed);
    out.train = evaluate_feedback(problem, ansatz, train_samples, steps, cfg.open_loop,
                                  cfg.workers, cache, phash, &out.train_references);
    out.test = evaluate_feedback(problem, ansatz, test_samples, steps, cfg.open_loop, cfg.workers,
                                 cache, phash, &out.test_references);
    return out;
}

/// One reference solution as a trajectory CSV plus a JSON sidecar with the
/// solver outcome.
inline void write_open_loop_solution(const std::filesystem::path& base,
                                     const OpenLoopSolution& sol) {
    std::ostringstream os;
    write_trajectory_csv(os, sol.trajectory);
    detail::write_text_file(base.string() + ".csv", os.str());
    nlohmann::json j = {{"cost", sol.cost},
                        {"iterations", sol.iterations},
                        {"converged", sol.converged},
                        {"grad_norm", sol.grad_norm}};
    detail::write_text_file(base.string() + ".json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// artifact writers
// ---------------------------------------------------------------------------

inline void write_coefficients_file(const std::filesystem::path& path,
                                    const TrainOutputs& outputs) {
    nlohmann::json j = ansatz_to_json(outputs.ansatz);
    j["config_hash"] = outputs.config_hash;
    j["basis_hash"] = outputs.basis_hash;
    detail::write_text_file(path, j.dump(2) + "\n");
}

inline PolynomialAnsatz load_coefficients_file(const std::filesystem::path& path,
                                               const RunConfig& cfg) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read coefficients file " + path.string());
    nlohmann::json j = nlohmann::json::parse(is);
    if (j.contains("basis_hash")) {
        ControlProblem problem = build_problem(cfg.problem);
        if (j.at("basis_hash").get<std::string>() != basis_compat_hash(cfg, problem))
            throw ConfigError("coefficients file does not match the configured basis");
    }
    return ansatz_from_json(j);
}

inline void write_iteration_log(const std::filesystem::path& path, const OptimizeResult& result,
                                const std::string& cfg_hash) {
    std::ostringstream os;
    os << "# config_hash " << cfg_hash << "\n";
    os << "k,J_k,penalty,s_accepted,backtracks,support_cardinality,wall_time_ms\n";
    for (const auto& rec : result.log) {
        os << rec.k << "," << detail::fmt_double(rec.objective) << ","
           << detail::fmt_double(rec.penalty) << "," << detail::fmt_double(rec.s_accepted) << ","
           << rec.backtracks << "," << rec.support << "," << detail::fmt_double(rec.wall_ms)
           << "\n";
    }
    detail::write_text_file(path, os.str());
}

inline void write_manifest(const std::filesystem::path& path, const RunConfig& cfg,
                           const std::string& command, double wall_ms) {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config_to_json(cfg);
    j["config_hash"] = config_hash(cfg);
    j["version"] = kVersion;
    j["wall_time_ms"] = wall_ms;
    detail::write_text_file(path, j.dump(2) + "\n");
}

struct SweepRow {
    double gamma = 0.0;
    int spatial_degree = 0;
    EvaluationResult train;
    EvaluationResult test;
    std::string status = "ok";
};

inline std::string sweep_csv(const std::vector<SweepRow>& rows, const std::string& cfg_hash) {
    std::ostringstream os;
    os << "# config_hash " << cfg_hash << "\n";
    os << "gamma,spatial_degree,train_MNAE_J_pct,test_MNAE_J_pct,support_pct,support_count,"
          "status\n";
    for (const auto& row : rows) {
        os << detail::fmt_double(row.gamma) << "," << row.spatial_degree << ",";
        if (row.status == "ok")
            os << detail::fmt_double(100.0 * row.train.mnae) << ","
               << detail::fmt_double(100.0 * row.test.mnae) << ","
               << detail::fmt_double(row.test.support_pct) << "," << row.test.support_count;
        else
            os << ",,,";
        os << "," << row.status << "\n";
    }
    return os.str();
}

inline void write_results_csv(const std::filesystem::path& path, const RunConfig& cfg,
                              const EvalOutputs& outputs) {
    SweepRow row{cfg.optimizer.gamma, cfg.basis.space_degree, outputs.train, outputs.test, "ok"};
    detail::write_text_file(path, sweep_csv({row}, config_hash(cfg)));
}

inline void write_samples_csv(const std::filesystem::path& path, const EvalOutputs& outputs,
                              const std::string& cfg_hash) {
    std::ostringstream os;
    os << "# config_hash " << cfg_hash << "\n";
    os << "set,sample,J_reference,J_feedback\n";
    auto emit = [&os](const char* tag, const EvaluationResult& r) {
        for (std::size_t i = 0; i < r.j_reference.size(); ++i)
            os << tag << "," << i << "," << detail::fmt_double(r.j_reference[i]) << ","
               << detail::fmt_double(r.j_feedback[i]) << "\n";
    };
    emit("train", outputs.train);
    emit("test", outputs.test);
    detail::write_text_file(path, os.str());
}

/// Cross product of penalty weights and spatial degrees, one train+eval per
/// cell, rows ordered gamma descending then degree ascending. A failed cell
/// keeps its row with an error status and the sweep continues.
inline std::vector<SweepRow> sweep_run(const RunConfig& base, std::vector<double> gammas,
                                       std::vector<int> degrees,
                                       const std::optional<std::filesystem::path>& out_dir) {
    std::sort(gammas.rbegin(), gammas.rend());
    std::sort(degrees.begin(), degrees.end());
    ReferenceCache cache;
    std::vector<SweepRow> rows;
    for (double gamma : gammas)
        for (int degree : degrees) {
            RunConfig cfg = base;
            cfg.optimizer.gamma = gamma;
            cfg.basis.space_degree = degree;
            SweepRow row;
            row.gamma = gamma;
            row.spatial_degree = degree;
            try {
                TrainOutputs trained = train_run(cfg);
                EvalOutputs ev = eval_run(cfg, trained.ansatz, &cache);
                row.train = ev.train;
                row.test = ev.test;
                if (out_dir) {
                    std::ostringstream cell;
                    cell << "cell_g" << detail::fmt_double(gamma) << "_n" << degree;
                    const auto dir = *out_dir / cell.str();
                    std::filesystem::create_directories(dir);
                    write_coefficients_file(dir / "coefficients.json", trained);
                    write_iteration_log(dir / "iterations.csv", trained.result,
                                        trained.config_hash);
                }
            } catch (const std::exception& e) {
                row.status = std::string("error: ") + e.what();
            }
            rows.push_back(std::move(row));
        }
    return rows;
}

}  // namespace polyfeed
