#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "polyfeed/dynamics.hpp"

namespace polyfeed {

/// Equispaced nodes on [t0, T]; node(steps) returns T exactly.
struct TimeGrid {
    double t0 = 0.0;
    double T = 1.0;
    int steps = 1;

    TimeGrid() = default;
    TimeGrid(double t0_, double T_, int steps_) : t0(t0_), T(T_), steps(steps_) {
        if (!(t0 >= 0.0) || !(t0 < T) || steps < 1)
            throw std::invalid_argument("TimeGrid: need 0 <= t0 < T and steps >= 1");
    }

    double h() const { return (T - t0) / steps; }
    double node(int k) const { return k == steps ? T : t0 + k * h(); }
    int nodes() const { return steps + 1; }
};

/// One closed- or open-loop rollout with its accumulated costs.
struct Trajectory {
    TimeGrid grid;
    std::vector<Vec> states;    // (steps+1) x d
    std::vector<Vec> controls;  // (steps+1) x M
    double running_cost = 0.0;
    double terminal_cost = 0.0;
    bool diverged = false;
    int failed_step = -1;
    std::string failure;
    int max_newton_iters = 0;

    double total_cost() const {
        return diverged ? std::numeric_limits<double>::infinity() : running_cost + terminal_cost;
    }
};

namespace detail {

inline bool state_ok(const Vec& y, double r_max) { return all_finite(y) && norm_inf(y) <= r_max; }

inline void mark_diverged(Trajectory& traj, int step, const std::string& why) {
    traj.diverged = true;
    traj.failed_step = step;
    traj.failure = why;
    traj.running_cost = std::numeric_limits<double>::infinity();
    traj.terminal_cost = std::numeric_limits<double>::infinity();
    // keep shapes intact for downstream consumers
    for (std::size_t k = 0; k < traj.states.size(); ++k)
        if (traj.states[k].empty()) traj.states[k] = traj.states[step];
    for (std::size_t k = 0; k < traj.controls.size(); ++k)
        if (traj.controls[k].empty()) traj.controls[k] = traj.controls.front();
}

inline double stage_cost(const ControlProblem& p, double t, const Vec& y, const Vec& u) {
    double uu = 0.0;
    for (double v : u) uu += v * v;
    return p.ell(t, y) + 0.5 * p.beta * uu;
}

/// Damped Newton on the Crank-Nicolson residual
///   r(Y) = Y - y_k - (h/2) (F_k + F(t_next, Y)),
/// with Jacobian I - (h/2) DF(t_next, Y), started from y_start. Steps halve
/// (up to 10 times) on residual increase, with a full-step fallback when no
/// halving decreases it. The factorization is reused across iterations and
/// refreshed when the contraction slows; the converged state is
/// tolerance-identical either way.
template <class Rhs>
bool cn_newton_solve(const Rhs& rhs, double t_next, double h, const Vec& y_prev,
                     const Vec& f_prev, const Vec& y_start, Vec& y_next, int& iters_used,
                     double guard) {
    const int d = static_cast<int>(y_prev.size());
    const double tol = 1e-10 * std::max(1.0, norm_inf(y_prev));
    const int max_iters = 50;
    Vec y = y_start;
    Vec f_next(d), residual(d), delta(d), y_trial(d), f_trial(d), r_trial(d);
    Matrix jac(d, d), df(d, d);
    rhs.eval(t_next, y, f_next, nullptr);
    auto compute_residual = [&](const Vec& yy, const Vec& ff, Vec& rr) {
        rr.resize(d);
        for (int i = 0; i < d; ++i) rr[i] = yy[i] - y_prev[i] - 0.5 * h * (f_prev[i] + ff[i]);
    };
    compute_residual(y, f_next, residual);
    double rnorm = norm_inf(residual);
    LuFactorization lu;
    bool have_factorization = false;
    auto refactor = [&]() {
        rhs.eval(t_next, y, f_next, &df);
        for (int r = 0; r < d; ++r)
            for (int c = 0; c < d; ++c) jac(r, c) = (r == c ? 1.0 : 0.0) - 0.5 * h * df(r, c);
        lu.factor(jac);
        have_factorization = true;
        return !lu.singular();
    };
    for (int it = 0; it < max_iters; ++it) {
        if (rnorm <= tol) {
            y_next = y;
            return true;
        }
        if (!have_factorization && !refactor()) return false;
        delta = residual;
        lu.solve(delta);
        ++iters_used;
        const double rnorm_before = rnorm;
        // Damped and undamped phases alternate: halving on residual increase
        // breaks the oscillation mode of rough profiles, while full steps ride
        // out the transient residual growth of steep-front profiles where
        // line-searched steps merely crawl. Either mode alone stalls on the
        // other's failure case.
        const bool pure_phase = (it / 12) % 2 == 1;
        double step_scale = 1.0;
        bool moved = false;
        Vec y_full, r_full;
        double rn_full = std::numeric_limits<double>::infinity();
        for (int halving = 0; halving <= 10; ++halving, step_scale *= 0.5) {
            for (int i = 0; i < d; ++i) y_trial[i] = y[i] - step_scale * delta[i];
            if (!all_finite(y_trial) || norm_inf(y_trial) > 10.0 * guard + 1e6) continue;
            rhs.eval(t_next, y_trial, f_trial, nullptr);
            compute_residual(y_trial, f_trial, r_trial);
            const double rn = norm_inf(r_trial);
            if (!std::isfinite(rn)) continue;
            if (rn_full == std::numeric_limits<double>::infinity()) {
                y_full = y_trial;
                r_full = r_trial;
                rn_full = rn;
            }
            if (pure_phase || rn < rnorm) {
                y = y_trial;
                residual = r_trial;
                rnorm = rn;
                moved = true;
                break;
            }
        }
        if (!moved) {
            if (!std::isfinite(rn_full)) return false;  // every trial blew up
            y = y_full;
            residual = r_full;
            rnorm = rn_full;
        }
        // stale-Jacobian contraction got weak: rebuild at the new iterate
        if (!moved || rnorm > 0.2 * rnorm_before) have_factorization = false;
    }
    return false;
}

/// One Crank-Nicolson step. Newton starts from the previous node; if it fails
/// to converge there (rough profiles can cycle or crawl far from the root),
/// the predictor is rebuilt from two recursive half-steps, which lands the
/// final Newton solve inside its quadratic-convergence basin.
template <class Rhs>
bool cn_newton_step(const Rhs& rhs, double t_next, double h, const Vec& y_prev,
                    const Vec& f_prev, Vec& y_next, int& iters_used, double guard,
                    int depth = 0) {
    iters_used = 0;
    if (cn_newton_solve(rhs, t_next, h, y_prev, f_prev, y_prev, y_next, iters_used, guard))
        return true;
    if (depth >= 4) return false;
    Vec y_mid, f_mid, hint;
    int sub_iters = 0;
    const double t_mid = t_next - 0.5 * h;
    if (!cn_newton_step(rhs, t_mid, 0.5 * h, y_prev, f_prev, y_mid, sub_iters, guard, depth + 1))
        return false;
    iters_used += sub_iters;
    rhs.eval(t_mid, y_mid, f_mid, nullptr);
    if (!cn_newton_step(rhs, t_next, 0.5 * h, y_mid, f_mid, hint, sub_iters, guard, depth + 1))
        return false;
    iters_used += sub_iters;
    int final_iters = 0;
    const bool ok =
        cn_newton_solve(rhs, t_next, h, y_prev, f_prev, hint, y_next, final_iters, guard);
    iters_used += final_iters;
    return ok;
}

/// Closed-loop right-hand side adapter used by the CN Newton solver.
template <class Surrogate>
struct ClosedLoopRhs {
    const FeedbackLaw<Surrogate>* law;
    mutable SurrogateEval scratch;
    mutable Vec u_scratch;

    void eval(double t, const Vec& y, Vec& F, Matrix* DF) const {
        law->surrogate->eval_full(t, y, scratch);
        detail::closed_loop_from_eval(*law->problem, t, y, scratch, u_scratch, F, DF);
    }
};

/// Open-loop right-hand side with node controls fixed by linear index.
struct OpenLoopRhs {
    const ControlProblem* problem;
    const Vec* u_node = nullptr;

    void eval(double t, const Vec& y, Vec& F, Matrix* DF) const {
        problem->f(t, y, F);
        const ControlProblem& p = *problem;
        for (int r = 0; r < p.dim; ++r) {
            double s = 0.0;
            for (int m = 0; m < p.control_dim; ++m) s += p.B(r, m) * (*u_node)[m];
            F[r] += s;
        }
        if (DF) p.df_y(t, y, *DF);
    }
};

}  // namespace detail

/// Explicit Euler with left-rectangle cost quadrature.
template <class Surrogate>
Trajectory euler_rollout(const FeedbackLaw<Surrogate>& law, const TimeGrid& grid, const Vec& y0) {
    const ControlProblem& p = *law.problem;
    Trajectory traj;
    traj.grid = grid;
    traj.states.assign(grid.nodes(), Vec());
    traj.controls.assign(grid.nodes(), Vec());
    traj.states[0] = y0;
    const double h = grid.h();
    SurrogateEval e;
    Vec F, u;
    if (!detail::state_ok(y0, p.R_max)) {
        traj.controls[0] = Vec(p.control_dim, 0.0);
        detail::mark_diverged(traj, 0, "initial state outside guard");
        return traj;
    }
    double running = 0.0;
    for (int k = 0; k < grid.steps; ++k) {
        const double t = grid.node(k);
        law.surrogate->eval_full(t, traj.states[k], e);
        detail::closed_loop_from_eval(p, t, traj.states[k], e, u, F, nullptr);
        traj.controls[k] = u;
        running += h * detail::stage_cost(p, t, traj.states[k], u);
        Vec next = traj.states[k];
        axpy(h, F, next);
        traj.states[k + 1] = std::move(next);
        if (!detail::state_ok(traj.states[k + 1], p.R_max)) {
            detail::mark_diverged(traj, k + 1, "state guard exceeded");
            return traj;
        }
    }
    law.surrogate->eval_full(grid.T, traj.states[grid.steps], e);
    feedback_from_grad(p, e.grad, u);
    traj.controls[grid.steps] = u;
    traj.running_cost = running;
    traj.terminal_cost = p.g(traj.states[grid.steps]);
    return traj;
}

/// Crank-Nicolson with trapezoid cost quadrature; damped Newton per step.
template <class Surrogate>
Trajectory crank_nicolson_rollout(const FeedbackLaw<Surrogate>& law, const TimeGrid& grid,
                                  const Vec& y0) {
    const ControlProblem& p = *law.problem;
    Trajectory traj;
    traj.grid = grid;
    traj.states.assign(grid.nodes(), Vec());
    traj.controls.assign(grid.nodes(), Vec());
    traj.states[0] = y0;
    const double h = grid.h();
    detail::ClosedLoopRhs<Surrogate> rhs{&law, {}, {}};
    SurrogateEval e;
    Vec F, u;
    if (!detail::state_ok(y0, p.R_max)) {
        traj.controls[0] = Vec(p.control_dim, 0.0);
        detail::mark_diverged(traj, 0, "initial state outside guard");
        return traj;
    }
    double running = 0.0;
    Vec f_prev;
    for (int k = 0; k < grid.steps; ++k) {
        const double t = grid.node(k);
        law.surrogate->eval_full(t, traj.states[k], e);
        detail::closed_loop_from_eval(p, t, traj.states[k], e, u, f_prev, nullptr);
        traj.controls[k] = u;
        const double w = (k == 0) ? 0.5 * h : h;
        running += w * detail::stage_cost(p, t, traj.states[k], u);
        Vec next;
        int iters = 0;
        if (!detail::cn_newton_step(rhs, grid.node(k + 1), h, traj.states[k], f_prev, next, iters,
                                    p.R_max)) {
            traj.states[k + 1] = traj.states[k];
            detail::mark_diverged(traj, k + 1,
                                  "newton_failure at step " + std::to_string(k + 1));
            return traj;
        }
        traj.max_newton_iters = std::max(traj.max_newton_iters, iters);
        traj.states[k + 1] = std::move(next);
        if (!detail::state_ok(traj.states[k + 1], p.R_max)) {
            detail::mark_diverged(traj, k + 1, "state guard exceeded");
            return traj;
        }
    }
    law.surrogate->eval_full(grid.T, traj.states[grid.steps], e);
    feedback_from_grad(p, e.grad, u);
    traj.controls[grid.steps] = u;
    running += 0.5 * h * detail::stage_cost(p, grid.T, traj.states[grid.steps], u);
    traj.running_cost = running;
    traj.terminal_cost = p.g(traj.states[grid.steps]);
    return traj;
}

/// Dispatch on the problem's configured scheme.
template <class Surrogate>
Trajectory rollout(const FeedbackLaw<Surrogate>& law, const TimeGrid& grid, const Vec& y0) {
    return law.problem->scheme == Scheme::ExplicitEuler ? euler_rollout(law, grid, y0)
                                                        : crank_nicolson_rollout(law, grid, y0);
}

/// Rolls out fixed node controls with the problem's scheme (Euler: left node
/// value; CN: node values at both interval ends).
inline Trajectory rollout_open_loop(const ControlProblem& p, const TimeGrid& grid, const Vec& y0,
                                    const std::vector<Vec>& u) {
    if (static_cast<int>(u.size()) != grid.nodes())
        throw std::invalid_argument("rollout_open_loop: control shape mismatch");
    Trajectory traj;
    traj.grid = grid;
    traj.states.assign(grid.nodes(), Vec());
    traj.controls = u;
    traj.states[0] = y0;
    const double h = grid.h();
    if (!detail::state_ok(y0, p.R_max)) {
        detail::mark_diverged(traj, 0, "initial state outside guard");
        return traj;
    }
    double running = 0.0;
    Vec F, f_prev;
    if (p.scheme == Scheme::ExplicitEuler) {
        detail::OpenLoopRhs rhs{&p, nullptr};
        for (int k = 0; k < grid.steps; ++k) {
            const double t = grid.node(k);
            rhs.u_node = &u[k];
            rhs.eval(t, traj.states[k], F, nullptr);
            running += h * detail::stage_cost(p, t, traj.states[k], u[k]);
            Vec next = traj.states[k];
            axpy(h, F, next);
            traj.states[k + 1] = std::move(next);
            if (!detail::state_ok(traj.states[k + 1], p.R_max)) {
                detail::mark_diverged(traj, k + 1, "state guard exceeded");
                return traj;
            }
        }
    } else {
        for (int k = 0; k < grid.steps; ++k) {
            const double t = grid.node(k);
            detail::OpenLoopRhs rhs_prev{&p, &u[k]};
            rhs_prev.eval(t, traj.states[k], f_prev, nullptr);
            const double w = (k == 0) ? 0.5 * h : h;
            running += w * detail::stage_cost(p, t, traj.states[k], u[k]);
            detail::OpenLoopRhs rhs_next{&p, &u[k + 1]};
            Vec next;
            int iters = 0;
            if (!detail::cn_newton_step(rhs_next, grid.node(k + 1), h, traj.states[k], f_prev,
                                        next, iters, p.R_max)) {
                traj.states[k + 1] = traj.states[k];
                detail::mark_diverged(traj, k + 1,
                                      "newton_failure at step " + std::to_string(k + 1));
                return traj;
            }
            traj.max_newton_iters = std::max(traj.max_newton_iters, iters);
            traj.states[k + 1] = std::move(next);
            if (!detail::state_ok(traj.states[k + 1], p.R_max)) {
                detail::mark_diverged(traj, k + 1, "state guard exceeded");
                return traj;
            }
        }
        running += 0.5 * h * detail::stage_cost(p, grid.T, traj.states[grid.steps], u[grid.steps]);
    }
    traj.running_cost = running;
    traj.terminal_cost = p.g(traj.states[grid.steps]);
    return traj;
}

/// CSV with header t, y_1..y_d, u_1..u_M.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    const int d = traj.states.empty() ? 0 : static_cast<int>(traj.states[0].size());
    const int m = traj.controls.empty() ? 0 : static_cast<int>(traj.controls[0].size());
    os << "t";
    for (int i = 1; i <= d; ++i) os << ",y_" << i;
    for (int i = 1; i <= m; ++i) os << ",u_" << i;
    os << "\n";
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << buf;
    };
    for (int k = 0; k < traj.grid.nodes(); ++k) {
        put(traj.grid.node(k));
        for (int i = 0; i < d; ++i) {
            os << ",";
            put(traj.states[k][i]);
        }
        for (int i = 0; i < m; ++i) {
            os << ",";
            put(traj.controls[k][i]);
        }
        os << "\n";
    }
}

}  // namespace polyfeed
