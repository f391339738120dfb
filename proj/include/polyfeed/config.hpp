#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "polyfeed/basis.hpp"
#include "polyfeed/learn.hpp"
#include "polyfeed/openloop.hpp"
#include "polyfeed/problems.hpp"

namespace polyfeed {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ProblemConfig {
    std::string name;  // pendulum | allen_cahn | multi_agent
    double beta = 0.1;
    double alpha = 1.0;
    double T = 0.0;    // 0: problem default
    int N_t = 0;       // 0: problem default
    int eval_N_t = 0;  // 0: same as N_t
    double R_max = 0.0;
    std::optional<double> t0_min;
    std::optional<double> t0_max;
};

struct BasisConfig {
    IndexSetKind kind = IndexSetKind::TotalDegree;
    int space_degree = 2;
    int time_degree = 10;
};

struct RunConfig {
    ProblemConfig problem;
    BasisConfig basis;
    OptimizerConfig optimizer;
    OpenLoopConfig open_loop;
    int train_size = 10;
    int test_size = 50;
    std::uint64_t train_seed = 1;
    std::uint64_t test_seed = 2;
    int workers = 0;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> keys,
                                const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        bool known = false;
        for (const char* k : keys)
            if (key == k) known = true;
        if (!known) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    detail::reject_unknown_keys(j,
                                {"problem", "basis", "optimizer", "open_loop", "train_size",
                                 "test_size", "train_seed", "test_seed", "workers"},
                                "config");
    RunConfig cfg;
    if (!j.contains("problem") || !j.at("problem").contains("name"))
        throw ConfigError("config: problem.name is required");
    const auto& jp = j.at("problem");
    detail::reject_unknown_keys(
        jp, {"name", "beta", "alpha", "T", "N_t", "eval_N_t", "R_max", "t0_min", "t0_max"},
        "config.problem");
    cfg.problem.name = jp.at("name").get<std::string>();
    if (cfg.problem.name != "pendulum" && cfg.problem.name != "allen_cahn" &&
        cfg.problem.name != "multi_agent")
        throw ConfigError("config.problem: unknown problem '" + cfg.problem.name + "'");
    detail::read_field(jp, "beta", cfg.problem.beta);
    detail::read_field(jp, "alpha", cfg.problem.alpha);
    detail::read_field(jp, "T", cfg.problem.T);
    detail::read_field(jp, "N_t", cfg.problem.N_t);
    detail::read_field(jp, "eval_N_t", cfg.problem.eval_N_t);
    detail::read_field(jp, "R_max", cfg.problem.R_max);
    if (jp.contains("t0_min")) cfg.problem.t0_min = jp.at("t0_min").get<double>();
    if (jp.contains("t0_max")) cfg.problem.t0_max = jp.at("t0_max").get<double>();
    if (cfg.problem.beta <= 0) throw ConfigError("config.problem: beta must be > 0");
    if (cfg.problem.alpha <= 0) throw ConfigError("config.problem: alpha must be > 0");

    if (j.contains("basis")) {
        const auto& jb = j.at("basis");
        detail::reject_unknown_keys(jb, {"kind", "space_degree", "time_degree"}, "config.basis");
        if (jb.contains("kind"))
            cfg.basis.kind = index_set_kind_from_string(jb.at("kind").get<std::string>());
        detail::read_field(jb, "space_degree", cfg.basis.space_degree);
        detail::read_field(jb, "time_degree", cfg.basis.time_degree);
        if (cfg.basis.space_degree < 0 || cfg.basis.time_degree < 1)
            throw ConfigError("config.basis: bad degrees");
    }
    if (j.contains("optimizer")) {
        const auto& jo = j.at("optimizer");
        detail::reject_unknown_keys(jo,
                                    {"gamma", "r", "kappa", "shrink", "window", "tol",
                                     "max_iters", "s_default", "s_min", "s_max"},
                                    "config.optimizer");
        detail::read_field(jo, "gamma", cfg.optimizer.gamma);
        detail::read_field(jo, "r", cfg.optimizer.r);
        detail::read_field(jo, "kappa", cfg.optimizer.kappa);
        detail::read_field(jo, "shrink", cfg.optimizer.shrink);
        detail::read_field(jo, "window", cfg.optimizer.window);
        detail::read_field(jo, "tol", cfg.optimizer.tol);
        detail::read_field(jo, "max_iters", cfg.optimizer.max_iters);
        detail::read_field(jo, "s_default", cfg.optimizer.s_default);
        detail::read_field(jo, "s_min", cfg.optimizer.s_min);
        detail::read_field(jo, "s_max", cfg.optimizer.s_max);
        try {
            cfg.optimizer.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config.optimizer: ") + e.what());
        }
    }
    if (j.contains("open_loop")) {
        const auto& jl = j.at("open_loop");
        detail::reject_unknown_keys(jl, {"tol", "max_iters"}, "config.open_loop");
        detail::read_field(jl, "tol", cfg.open_loop.tol);
        detail::read_field(jl, "max_iters", cfg.open_loop.max_iters);
        if (cfg.open_loop.tol <= 0 || cfg.open_loop.max_iters < 1)
            throw ConfigError("config.open_loop: bad parameters");
    }
    detail::read_field(j, "train_size", cfg.train_size);
    detail::read_field(j, "test_size", cfg.test_size);
    detail::read_field(j, "train_seed", cfg.train_seed);
    detail::read_field(j, "test_seed", cfg.test_seed);
    detail::read_field(j, "workers", cfg.workers);
    if (cfg.train_size < 1 || cfg.test_size < 1) throw ConfigError("config: sample sizes >= 1");
    return cfg;
}

/// Problem instance with the config's overrides applied.
inline ControlProblem build_problem(const ProblemConfig& pc) {
    ControlProblem p;
    if (pc.name == "pendulum") {
        p = build_pendulum(pc.alpha, pc.beta, pc.N_t > 0 ? pc.N_t : 100,
                           pc.R_max > 0 ? pc.R_max : 1e3);
    } else if (pc.name == "allen_cahn") {
        p = build_allen_cahn(pc.alpha, pc.beta, pc.N_t > 0 ? pc.N_t : 200,
                             pc.R_max > 0 ? pc.R_max : 100.0);
    } else if (pc.name == "multi_agent") {
        p = build_multi_agent(pc.beta, pc.N_t > 0 ? pc.N_t : 100, pc.T > 0 ? pc.T : 1.0,
                              pc.R_max > 0 ? pc.R_max : 100.0);
    } else {
        throw ConfigError("build_problem: unknown problem '" + pc.name + "'");
    }
    if (pc.T > 0 && pc.name != "multi_agent" && pc.T != p.T)
        throw ConfigError("build_problem: horizon is fixed for " + pc.name);
    if (pc.t0_min) p.t0_min = *pc.t0_min;
    if (pc.t0_max) p.t0_max = *pc.t0_max;
    if (p.t0_min < 0 || p.t0_max > p.T || p.t0_min >= p.t0_max)
        throw ConfigError("build_problem: bad initial-time interval");
    return p;
}

inline nlohmann::json config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["problem"] = {{"name", cfg.problem.name}, {"beta", cfg.problem.beta},
                    {"alpha", cfg.problem.alpha}, {"T", cfg.problem.T},
                    {"N_t", cfg.problem.N_t}, {"eval_N_t", cfg.problem.eval_N_t},
                    {"R_max", cfg.problem.R_max}};
    if (cfg.problem.t0_min) j["problem"]["t0_min"] = *cfg.problem.t0_min;
    if (cfg.problem.t0_max) j["problem"]["t0_max"] = *cfg.problem.t0_max;
    j["basis"] = {{"kind", to_string(cfg.basis.kind)},
                  {"space_degree", cfg.basis.space_degree},
                  {"time_degree", cfg.basis.time_degree}};
    j["optimizer"] = {{"gamma", cfg.optimizer.gamma},   {"r", cfg.optimizer.r},
                      {"kappa", cfg.optimizer.kappa},   {"shrink", cfg.optimizer.shrink},
                      {"window", cfg.optimizer.window}, {"tol", cfg.optimizer.tol},
                      {"max_iters", cfg.optimizer.max_iters},
                      {"s_default", cfg.optimizer.s_default},
                      {"s_min", cfg.optimizer.s_min},   {"s_max", cfg.optimizer.s_max}};
    j["open_loop"] = {{"tol", cfg.open_loop.tol}, {"max_iters", cfg.open_loop.max_iters}};
    j["train_size"] = cfg.train_size;
    j["test_size"] = cfg.test_size;
    j["train_seed"] = cfg.train_seed;
    j["test_seed"] = cfg.test_seed;
    return j;
}

inline std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Hash of the full run configuration (sorted-key canonical JSON).
inline std::string config_hash(const RunConfig& cfg) {
    return hex64(fnv1a(config_to_json(cfg).dump()));
}

/// Hash of the fields a coefficient file must agree on to be loadable.
inline std::string basis_compat_hash(const RunConfig& cfg, const ControlProblem& p) {
    nlohmann::json j = {{"problem", cfg.problem.name},
                        {"kind", to_string(cfg.basis.kind)},
                        {"space_degree", cfg.basis.space_degree},
                        {"time_degree", cfg.basis.time_degree},
                        {"space_scale", p.space_scale},
                        {"horizon", p.T},
                        {"dim", p.dim}};
    return hex64(fnv1a(j.dump()));
}

}  // namespace polyfeed
