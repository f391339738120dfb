#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "polyfeed/integrate.hpp"

namespace polyfeed {

struct OpenLoopSolution {
    TimeGrid grid;
    std::vector<Vec> u;
    Trajectory trajectory;
    double cost = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
    double grad_norm = 0.0;
};

struct OpenLoopConfig {
    double tol = 1e-8;
    int max_iters = 400;
    double armijo = 1e-4;
    double shrink = 0.5;
    int max_backtracks = 40;
};

namespace detail {

/// Gradient of the discrete open-loop cost with respect to the node controls,
/// expressed per node as G_k ~ beta u_k + B^T q (the Pontryagin gradient), so
/// that sum_k w_k |G_k|^2 discretizes the squared L2 norm of the gradient.
inline bool open_loop_gradient(const ControlProblem& p, const Trajectory& traj,
                               const std::vector<Vec>& u, std::vector<Vec>& G, Vec& w) {
    const int N = traj.grid.steps;
    const double h = traj.grid.h();
    const int d = p.dim;
    G.assign(N + 1, Vec(p.control_dim, 0.0));
    w.assign(N + 1, h);
    Vec gg;
    p.grad_g(traj.states[N], gg);
    if (p.scheme == Scheme::ExplicitEuler) {
        w[N] = 0.0;  // left-rectangle quadrature: the last node carries no cost
        Vec a = gg, gl(d), tmp(d), btq(p.control_dim);
        Matrix df;
        for (int k = N - 1; k >= 0; --k) {
            matvec_transposed(p.B, a, btq);
            for (int m = 0; m < p.control_dim; ++m) G[k][m] = p.beta * u[k][m] + btq[m];
            const double t = traj.grid.node(k);
            p.df_y(t, traj.states[k], df);
            matvec_transposed(df, a, tmp);
            p.grad_ell(t, traj.states[k], gl);
            axpy(h, tmp, a);
            axpy(h, gl, a);
            if (!all_finite(a)) return false;
        }
    } else {
        w[0] = 0.5 * h;
        w[N] = 0.5 * h;
        // psi_{k+1}: multiplier of the interval [t_k, t_{k+1}] constraint
        std::vector<Vec> psi(N + 1);
        Matrix df, E(d, d);
        Vec rhs(d), tmp(d), gl(d);
        auto solve_Et = [&](int node, Vec& b) {
            p.df_y(traj.grid.node(node), traj.states[node], df);
            for (int r = 0; r < d; ++r)
                for (int c = 0; c < d; ++c) E(r, c) = (r == c ? 1.0 : 0.0) - 0.5 * h * df(r, c);
            LuFactorization lu(E);
            if (lu.singular()) return false;
            lu.solve_transposed(b);
            return true;
        };
        p.grad_ell(traj.grid.T, traj.states[N], gl);
        rhs = gg;
        axpy(0.5 * h, gl, rhs);
        if (!solve_Et(N, rhs)) return false;
        psi[N] = rhs;
        for (int k = N - 1; k >= 1; --k) {
            const double t = traj.grid.node(k);
            p.df_y(t, traj.states[k], df);
            matvec_transposed(df, psi[k + 1], tmp);
            rhs = psi[k + 1];
            axpy(0.5 * h, tmp, rhs);
            p.grad_ell(t, traj.states[k], gl);
            axpy(h, gl, rhs);
            if (!solve_Et(k, rhs)) return false;
            psi[k] = rhs;
        }
        Vec btq(p.control_dim);
        for (int k = 0; k <= N; ++k) {
            Vec q(d, 0.0);
            if (k >= 1) axpy(0.5 * h, psi[k], q);
            if (k <= N - 1) axpy(0.5 * h, psi[k + 1], q);
            matvec_transposed(p.B, q, btq);
            for (int m = 0; m < p.control_dim; ++m)
                G[k][m] = p.beta * u[k][m] + btq[m] / w[k];
        }
    }
    return true;
}

inline double weighted_norm2_sq(const std::vector<Vec>& G, const Vec& w) {
    double s = 0.0;
    for (std::size_t k = 0; k < G.size(); ++k) {
        double g2 = 0.0;
        for (double v : G[k]) g2 += v * v;
        s += w[k] * g2;
    }
    return s;
}

inline double weighted_inner(const std::vector<Vec>& a, const std::vector<Vec>& b, const Vec& w) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        double d = 0.0;
        for (std::size_t m = 0; m < a[k].size(); ++m) d += a[k][m] * b[k][m];
        s += w[k] * d;
    }
    return s;
}

}  // namespace detail

/// Reference solver: steepest descent on the node controls with an Armijo
/// backtracking line search; the Barzilai-Borwein quotient seeds each step.
/// The gradient comes from the discrete adjoint of the problem's stepper, so
/// it matches finite differences of the rolled-out cost.
inline OpenLoopSolution solve_open_loop(const ControlProblem& p, const TimeGrid& grid,
                                        const Vec& y0, const std::vector<Vec>& u_init,
                                        const OpenLoopConfig& cfg = {}) {
    OpenLoopSolution sol;
    sol.grid = grid;
    sol.u = u_init.empty() ? std::vector<Vec>(grid.nodes(), Vec(p.control_dim, 0.0)) : u_init;
    sol.trajectory = rollout_open_loop(p, grid, y0, sol.u);
    sol.cost = sol.trajectory.total_cost();
    if (sol.trajectory.diverged) return sol;

    std::vector<Vec> G, G_prev, u_prev, u_trial(grid.nodes(), Vec(p.control_dim, 0.0));
    Vec w;
    if (!detail::open_loop_gradient(p, sol.trajectory, sol.u, G, w)) return sol;
    double gnorm_sq = detail::weighted_norm2_sq(G, w);
    double s = 1.0 / (1.0 + std::sqrt(gnorm_sq));
    const auto unorm = [&]() { return std::sqrt(detail::weighted_norm2_sq(sol.u, w)); };
    int stalls = 0;

    for (int it = 0; it < cfg.max_iters; ++it) {
        sol.grad_norm = std::sqrt(gnorm_sq);
        if (sol.grad_norm <= 10.0 * cfg.tol * (1.0 + unorm())) {
            sol.converged = true;
            break;
        }
        // Armijo backtracking along -G
        bool accepted = false;
        double cost_new = sol.cost;
        Trajectory traj_new;
        for (int bt = 0; bt <= cfg.max_backtracks; ++bt) {
            for (int k = 0; k < grid.nodes(); ++k)
                for (int m = 0; m < p.control_dim; ++m)
                    u_trial[k][m] = sol.u[k][m] - s * G[k][m];
            traj_new = rollout_open_loop(p, grid, y0, u_trial);
            cost_new = traj_new.total_cost();
            if (cost_new <= sol.cost - cfg.armijo * s * gnorm_sq) {
                accepted = true;
                break;
            }
            s *= cfg.shrink;
        }
        ++sol.iterations;
        if (!accepted) break;
        u_prev = sol.u;
        G_prev = G;
        sol.u = u_trial;
        sol.trajectory = std::move(traj_new);
        const double rel_decrease = (sol.cost - cost_new) / std::max(std::abs(sol.cost), 1e-300);
        sol.cost = cost_new;
        if (!detail::open_loop_gradient(p, sol.trajectory, sol.u, G, w)) break;
        gnorm_sq = detail::weighted_norm2_sq(G, w);
        sol.grad_norm = std::sqrt(gnorm_sq);
        if (rel_decrease < cfg.tol) {
            if (sol.grad_norm <= 10.0 * cfg.tol * (1.0 + unorm())) {
                sol.converged = true;
                break;
            }
            if (++stalls >= 40) break;  // cost has hit its floor, stop grinding
        } else {
            stalls = 0;
        }
        // BB1 seed for the next step
        double du_dg = 0.0, dg_dg = 0.0;
        for (int k = 0; k < grid.nodes(); ++k)
            for (int m = 0; m < p.control_dim; ++m) {
                const double du = sol.u[k][m] - u_prev[k][m];
                const double dg = G[k][m] - G_prev[k][m];
                du_dg += w[k] * du * dg;
                dg_dg += w[k] * dg * dg;
            }
        if (du_dg > 0.0 && dg_dg > 0.0 && std::isfinite(du_dg / dg_dg))
            s = std::clamp(du_dg / dg_dg, 1e-12, 1e6);
    }
    if (p.scheme == Scheme::ExplicitEuler && !sol.trajectory.diverged) {
        // Euler leaves the final node's control free; fill it with the
        // Pontryagin terminal value so exported series cover every node.
        Vec gg, bt(p.control_dim);
        p.grad_g(sol.trajectory.states[grid.steps], gg);
        matvec_transposed(p.B, gg, bt);
        for (int m = 0; m < p.control_dim; ++m) sol.u[grid.steps][m] = -bt[m] / p.beta;
        sol.trajectory.controls[grid.steps] = sol.u[grid.steps];
    }
    return sol;
}

/// Backward integration of the matrix Riccati equation
///   -P' = A^T P + P A - (1/beta) P B B^T P + I,  P(T) = alpha I,
/// with Crank-Nicolson style steps (fixed-point solved, symmetrized).
/// The value of the LQ problem with ell = |y|^2/2 and g = alpha |y|^2/2 is
/// y^T P(t0) y / 2.
inline std::vector<Matrix> riccati_oracle(const std::function<Matrix(double)>& A, const Matrix& B,
                                          double beta, double alpha_terminal,
                                          const TimeGrid& grid) {
    const int d = B.rows();
    const int N = grid.steps;
    const double h = grid.h();
    std::vector<Matrix> P(N + 1);
    P[N] = Matrix::identity(d);
    for (int i = 0; i < d; ++i) P[N](i, i) = alpha_terminal;
    const Matrix BBt = matmul(B, B.transposed());
    auto rhs = [&](double t, const Matrix& X) {
        const Matrix At = A(t);
        Matrix G = matmul(At.transposed(), X);
        Matrix XA = matmul(X, At);
        Matrix XBBtX = matmul(matmul(X, BBt), X);
        for (int r = 0; r < d; ++r)
            for (int c = 0; c < d; ++c)
                G(r, c) += XA(r, c) - XBBtX(r, c) / beta + (r == c ? 1.0 : 0.0);
        return G;
    };
    for (int k = N - 1; k >= 0; --k) {
        const double tk = grid.node(k), tk1 = grid.node(k + 1);
        const Matrix Gk1 = rhs(tk1, P[k + 1]);
        Matrix X = P[k + 1];  // predictor
        for (int it = 0; it < 200; ++it) {
            Matrix Gk = rhs(tk, X);
            Matrix X_new = P[k + 1];
            double delta = 0.0;
            for (int r = 0; r < d; ++r)
                for (int c = 0; c < d; ++c) {
                    X_new(r, c) += 0.5 * h * (Gk(r, c) + Gk1(r, c));
                }
            // symmetrize to suppress drift
            for (int r = 0; r < d; ++r)
                for (int c = r; c < d; ++c) {
                    const double sym = 0.5 * (X_new(r, c) + X_new(c, r));
                    X_new(r, c) = sym;
                    X_new(c, r) = sym;
                }
            for (int r = 0; r < d; ++r)
                for (int c = 0; c < d; ++c) delta = std::max(delta, std::abs(X_new(r, c) - X(r, c)));
            X = std::move(X_new);
            if (!all_finite(X.data())) throw std::runtime_error("riccati_oracle: blow-up");
            if (delta <= 1e-13 * std::max(1.0, norm_inf(X.data()))) break;
        }
        P[k] = std::move(X);
    }
    return P;
}

}  // namespace polyfeed
