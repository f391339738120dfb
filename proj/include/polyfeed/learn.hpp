#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "polyfeed/linalg.hpp"

namespace polyfeed {

struct OptimizerConfig {
    double gamma = 0.0;   ///< elastic-net penalty weight (>= 0)
    double r = 0.0;       ///< l1 fraction in [0, 1]
    double kappa = 1e-4;  ///< sufficient-decrease constant in (0, 1)
    double shrink = 0.5;  ///< backtracking factor in (0, 1)
    int window = 5;       ///< non-monotone memory n >= 0
    double tol = 1e-5;
    int max_iters = 5000;
    double s_default = 1.0;
    double s_min = 1e-8;
    double s_max = 1e8;
    int ls_max_backtracks = 60;

    void validate() const {
        if (gamma < 0 || r < 0 || r > 1 || kappa <= 0 || kappa >= 1 || shrink <= 0 ||
            shrink >= 1 || window < 0 || tol <= 0 || s_default <= 0 || s_min <= 0 ||
            s_max < s_min || max_iters < 1)
            throw std::invalid_argument("OptimizerConfig: parameter out of range");
    }
};

/// d^k = grad J~(theta^k) + gamma (1-r) theta^k  (smooth part of the penalty).
inline Vec smooth_gradient(const Vec& theta, const Vec& grad_J, const OptimizerConfig& cfg) {
    if (theta.size() != grad_J.size())
        throw std::invalid_argument("smooth_gradient: shape mismatch");
    Vec d = grad_J;
    const double c = cfg.gamma * (1.0 - cfg.r);
    if (c != 0.0) axpy(c, theta, d);
    return d;
}

/// Closed-form proximal update: soft-threshold of theta - s d at level s*gamma*r.
inline Vec prox_step(const Vec& theta, const Vec& d, double s, const OptimizerConfig& cfg) {
    if (s <= 0) throw std::invalid_argument("prox_step: step must be positive");
    const double threshold = s * cfg.gamma * cfg.r;
    Vec out(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double z = theta[i] - s * d[i];
        const double mag = std::abs(z) - threshold;
        out[i] = mag > 0 ? (z > 0 ? mag : -mag) : 0.0;
    }
    return out;
}

/// Barzilai-Borwein seed; rule alternates with the iteration parity, falls
/// back to s_default on a non-positive or non-finite quotient.
inline double bb_step(const Vec& theta_k, const Vec& theta_km1, const Vec& d_k, const Vec& d_km1,
                      int k, const OptimizerConfig& cfg) {
    double dtheta_dd = 0.0, dd_dd = 0.0, dtheta_dtheta = 0.0;
    for (std::size_t i = 0; i < theta_k.size(); ++i) {
        const double dt = theta_k[i] - theta_km1[i];
        const double dg = d_k[i] - d_km1[i];
        dtheta_dd += dt * dg;
        dd_dd += dg * dg;
        dtheta_dtheta += dt * dt;
    }
    const double s0 = (k % 2 != 0) ? dtheta_dd / dd_dd : dtheta_dtheta / dtheta_dd;
    if (!std::isfinite(s0) || s0 <= 0.0 || dtheta_dd <= 0.0) return cfg.s_default;
    return std::clamp(s0, cfg.s_min, cfg.s_max);
}

inline double elastic_penalty(const Vec& theta, const OptimizerConfig& cfg) {
    if (cfg.gamma == 0.0) return 0.0;
    double l1 = 0.0, l2 = 0.0;
    for (double v : theta) {
        l1 += std::abs(v);
        l2 += v * v;
    }
    return cfg.gamma * (0.5 * (1.0 - cfg.r) * l2 + cfg.r * l1);
}

struct LineSearchResult {
    Vec theta;
    double objective = std::numeric_limits<double>::infinity();
    double s = 0.0;
    int backtracks = 0;
    bool ok = false;
};

/// Non-monotone backtracking: accepts the first s = s0 shrink^i whose proximal
/// point theta+ satisfies
///   J(theta+) <= max(history) - (kappa / s) |theta - theta+|^2,
/// where history holds the last min(k, n)+1 accepted objective values.
inline LineSearchResult line_search(const Vec& theta, const Vec& d, double s0,
                                    const std::deque<double>& history,
                                    const OptimizerConfig& cfg,
                                    const std::function<double(const Vec&)>& objective) {
    if (s0 <= 0) throw std::invalid_argument("line_search: initial step must be positive");
    double j_ref = -std::numeric_limits<double>::infinity();
    for (double j : history) j_ref = std::max(j_ref, j);
    LineSearchResult res;
    double s = s0;
    for (int i = 0; i <= cfg.ls_max_backtracks; ++i, s *= cfg.shrink) {
        Vec candidate = prox_step(theta, d, s, cfg);
        double dist_sq = 0.0;
        for (std::size_t q = 0; q < theta.size(); ++q) {
            const double diff = theta[q] - candidate[q];
            dist_sq += diff * diff;
        }
        const double j_new = objective(candidate);
        if (j_new <= j_ref - cfg.kappa / s * dist_sq) {
            res.theta = std::move(candidate);
            res.objective = j_new;
            res.s = s;
            res.backtracks = i;
            res.ok = true;
            return res;
        }
    }
    return res;
}

struct IterationRecord {
    int k = 0;
    double objective = 0.0;  ///< penalized J_k
    double penalty = 0.0;
    double s_accepted = 0.0;
    int backtracks = 0;
    int support = 0;
    double wall_ms = 0.0;
};

struct OptimizeResult {
    Vec theta;  ///< argmin_k J_k
    double objective = std::numeric_limits<double>::infinity();
    int best_iteration = 0;
    int iterations = 0;
    std::string stop_reason;
    std::vector<IterationRecord> log;
};

/// Optimizer working set (current/previous iterate and gradient, the
/// non-monotone value window, and the running best).
struct OptimizerState {
    Vec theta, theta_prev;
    Vec d, d_prev;
    std::deque<double> history;
    int k = 0;
    Vec theta_best;
    double j_best = std::numeric_limits<double>::infinity();
    int k_best = 0;
};

inline int support_count(const Vec& theta, double threshold = 0.0) {
    int c = 0;
    for (double v : theta)
        if (std::abs(v) > threshold) ++c;
    return c;
}

/// Proximal gradient driver: one plain-seeded first step, then BB seed +
/// non-monotone search per iteration; stops on the windowed relative-decrease
/// rule, the iteration cap, or a failed search. Returns the best iterate seen.
///
/// smooth_value(theta) evaluates the sampled objective alone; smooth_grad
/// additionally returns its gradient. The elastic-net terms are added here.
inline OptimizeResult optimize(
    const Vec& theta0, const std::function<double(const Vec&)>& smooth_value,
    const std::function<std::pair<double, Vec>(const Vec&)>& smooth_grad,
    const OptimizerConfig& cfg) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    const auto elapsed_ms = [&]() {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                         t_start)
            .count();
    };
    const auto penalized = [&](const Vec& th) {
        return smooth_value(th) + elastic_penalty(th, cfg);
    };

    OptimizerState st;
    OptimizeResult out;
    st.theta = theta0;
    auto [j_smooth0, grad0] = smooth_grad(st.theta);
    const double j0 = j_smooth0 + elastic_penalty(st.theta, cfg);
    if (!std::isfinite(j0))
        throw std::runtime_error("optimize: initial surrogate outside feasible set");
    st.d = smooth_gradient(st.theta, grad0, cfg);
    st.history.push_back(j0);
    st.theta_best = st.theta;
    st.j_best = j0;
    st.k_best = 0;
    out.log.push_back({0, j0, elastic_penalty(st.theta, cfg), 0.0, 0,
                       support_count(st.theta), elapsed_ms()});

    const auto push_history = [&](double j) {
        st.history.push_back(j);
        while (static_cast<int>(st.history.size()) > cfg.window + 1) st.history.pop_front();
    };

    // first step: proximal update seeded with s_default
    LineSearchResult ls = line_search(st.theta, st.d, cfg.s_default, st.history, cfg, penalized);
    if (!ls.ok) {
        out.theta = st.theta_best;
        out.objective = st.j_best;
        out.best_iteration = st.k_best;
        out.stop_reason = "line_search_failed";
        return out;
    }
    double j_k = ls.objective;
    st.theta_prev = st.theta;
    st.d_prev = st.d;
    st.theta = ls.theta;
    {
        auto [js, g] = smooth_grad(st.theta);
        (void)js;
        st.d = smooth_gradient(st.theta, g, cfg);
    }
    st.k = 1;
    if (j_k < st.j_best) {
        st.j_best = j_k;
        st.theta_best = st.theta;
        st.k_best = 1;
    }
    out.log.push_back({1, j_k, elastic_penalty(st.theta, cfg), ls.s, ls.backtracks,
                       support_count(st.theta), elapsed_ms()});

    out.stop_reason = "max_iters";
    for (;;) {
        double j_max_prev = -std::numeric_limits<double>::infinity();
        for (double j : st.history) j_max_prev = std::max(j_max_prev, j);
        push_history(j_k);
        if (!(j_max_prev - j_k > cfg.tol * j_max_prev)) {
            out.stop_reason = "converged";
            break;
        }
        if (st.k >= cfg.max_iters) break;
        const double s0 = bb_step(st.theta, st.theta_prev, st.d, st.d_prev, st.k, cfg);
        ls = line_search(st.theta, st.d, s0, st.history, cfg, penalized);
        if (!ls.ok) {
            out.stop_reason = "line_search_failed";
            break;
        }
        st.theta_prev = st.theta;
        st.d_prev = st.d;
        st.theta = ls.theta;
        j_k = ls.objective;
        auto [js, g] = smooth_grad(st.theta);
        (void)js;
        st.d = smooth_gradient(st.theta, g, cfg);
        ++st.k;
        if (j_k < st.j_best) {
            st.j_best = j_k;
            st.theta_best = st.theta;
            st.k_best = st.k;
        }
        out.log.push_back({st.k, j_k, elastic_penalty(st.theta, cfg), ls.s, ls.backtracks,
                           support_count(st.theta), elapsed_ms()});
    }
    out.theta = st.theta_best;
    out.objective = st.j_best;
    out.best_iteration = st.k_best;
    out.iterations = st.k;
    return out;
}

}  // namespace polyfeed
