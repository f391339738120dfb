#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

#include "polyfeed/integrate.hpp"
#include "polyfeed/parallel.hpp"

namespace polyfeed {

/// Adjoint state at the rollout nodes; p(T) = -grad g(y(T)).
struct AdjointPath {
    TimeGrid grid;
    std::vector<Vec> p;
};

/// Cost of one rollout and its derivative with respect to the surrogate
/// coefficients (time_degree x basis_size, flattened row-major like theta).
struct SampleGradient {
    double value = std::numeric_limits<double>::infinity();
    Matrix grad_theta;
    Vec grad_y0;
    bool valid = false;
};

template <class Surrogate>
double eval_V(const FeedbackLaw<Surrogate>& law, double t0, const Vec& y0, int steps = 0) {
    const int n = steps > 0 ? steps : law.problem->default_steps;
    return rollout(law, TimeGrid(t0, law.problem->T, n), y0).total_cost();
}

namespace detail {

/// Per-node quantities shared by the backward passes:
///   DF    = Df_y - (1/beta) B B^T hess_v            (closed-loop Jacobian)
///   gradL = grad_ell + (1/beta) hess_v B B^T grad_v (running-cost gradient)
struct AdjointNodes {
    std::vector<Vec> grad_v;
    std::vector<Matrix> DF;
    std::vector<Vec> grad_L;
};

template <class Surrogate>
void prepare_adjoint_nodes(const FeedbackLaw<Surrogate>& law, const Trajectory& traj,
                           AdjointNodes& nodes) {
    const ControlProblem& p = *law.problem;
    const int n_nodes = traj.grid.nodes();
    const int d = p.dim;
    nodes.grad_v.resize(n_nodes);
    nodes.DF.resize(n_nodes);
    nodes.grad_L.resize(n_nodes);
    SurrogateEval e;
    Vec bt_grad(p.control_dim), b_bt_grad(d), h_term(d);
    for (int k = 0; k < n_nodes; ++k) {
        const double t = traj.grid.node(k);
        const Vec& y = traj.states[k];
        law.surrogate->eval_full(t, y, e);
        nodes.grad_v[k] = e.grad;
        Matrix& DF = nodes.DF[k];
        p.df_y(t, y, DF);
        matvec_transposed(p.B, e.grad, bt_grad);
        matvec(p.B, bt_grad, b_bt_grad);
        matvec(e.hess, b_bt_grad, h_term);
        p.grad_ell(t, y, nodes.grad_L[k]);
        axpy(1.0 / p.beta, h_term, nodes.grad_L[k]);
        // DF -= (1/beta) B (B^T H)
        for (int m = 0; m < p.control_dim; ++m) {
            for (int c = 0; c < d; ++c) {
                double bth = 0.0;
                for (int r = 0; r < d; ++r) bth += p.B(r, m) * e.hess(r, c);
                if (bth == 0.0) continue;
                bth /= p.beta;
                for (int r = 0; r < d; ++r) DF(r, c) -= p.B(r, m) * bth;
            }
        }
    }
}

inline void scaled_bbt(const ControlProblem& p, const Vec& zeta, double scale, Vec& out) {
    Vec tmp(p.control_dim);
    matvec_transposed(p.B, zeta, tmp);
    matvec(p.B, tmp, out);
    for (double& v : out) v *= scale;
}

}  // namespace detail

/// Backward adjoint on the rollout grid, scheme matched to the forward pass:
/// explicit Euler rollouts get the reverse-step recursion that is the exact
/// discrete adjoint, Crank-Nicolson rollouts get the CN discretization of the
/// continuous adjoint equation. Terminal condition p(T) = -grad g(y(T)).
template <class Surrogate>
AdjointPath solve_adjoint(const FeedbackLaw<Surrogate>& law, const Trajectory& traj) {
    if (traj.diverged) throw std::runtime_error("solve_adjoint: diverged trajectory");
    const ControlProblem& p = *law.problem;
    const int N = traj.grid.steps;
    const double h = traj.grid.h();
    detail::AdjointNodes nodes;
    detail::prepare_adjoint_nodes(law, traj, nodes);
    AdjointPath path;
    path.grid = traj.grid;
    path.p.assign(N + 1, Vec());
    Vec gg;
    p.grad_g(traj.states[N], gg);
    path.p[N] = scaled(gg, -1.0);
    if (p.scheme == Scheme::ExplicitEuler) {
        Vec tmp(p.dim);
        for (int k = N - 1; k >= 0; --k) {
            matvec_transposed(nodes.DF[k], path.p[k + 1], tmp);
            Vec pk = path.p[k + 1];
            axpy(h, tmp, pk);
            axpy(-h, nodes.grad_L[k], pk);
            path.p[k] = std::move(pk);
        }
    } else {
        Vec rhs(p.dim), tmp(p.dim);
        Matrix lhs(p.dim, p.dim);
        for (int k = N - 1; k >= 0; --k) {
            // (I - h/2 DF_k^T) p_k = (I + h/2 DF_{k+1}^T) p_{k+1} - h/2 (gradL_k + gradL_{k+1})
            matvec_transposed(nodes.DF[k + 1], path.p[k + 1], tmp);
            rhs = path.p[k + 1];
            axpy(0.5 * h, tmp, rhs);
            axpy(-0.5 * h, nodes.grad_L[k], rhs);
            axpy(-0.5 * h, nodes.grad_L[k + 1], rhs);
            const Matrix& DF = nodes.DF[k];
            for (int r = 0; r < p.dim; ++r)
                for (int c = 0; c < p.dim; ++c)
                    lhs(r, c) = (r == c ? 1.0 : 0.0) - 0.5 * h * DF(c, r);
            LuFactorization lu(lhs);
            if (lu.singular()) throw std::runtime_error("solve_adjoint: singular CN system");
            lu.solve(rhs);
            path.p[k] = rhs;
        }
    }
    for (const Vec& v : path.p)
        if (!all_finite(v)) throw std::runtime_error("solve_adjoint: numeric overflow");
    return path;
}

/// Value and exact coefficient gradient of the discretized rollout cost. The
/// quadrature of the gradient integral pairs the adjoint values with the nodes
/// the discrete chain rule dictates, so the result matches finite differences
/// of eval_V to solver precision.
template <class Surrogate>
SampleGradient sample_gradient_from_trajectory(const FeedbackLaw<Surrogate>& law,
                                               const Trajectory& traj) {
    if (traj.diverged) throw std::runtime_error("sample_gradient: diverged trajectory");
    const ControlProblem& p = *law.problem;
    const Surrogate& v = *law.surrogate;
    const int N = traj.grid.steps;
    const double h = traj.grid.h();
    detail::AdjointNodes nodes;
    detail::prepare_adjoint_nodes(law, traj, nodes);

    SampleGradient out;
    out.value = traj.total_cost();
    out.grad_theta.resize(v.time_degree(), v.basis_size());
    Vec pow_scratch, tp, gdots, z(p.dim), zeta(p.dim);

    auto accumulate_node = [&](int k, const Vec& zeta_k) {
        detail::scaled_bbt(p, zeta_k, 1.0 / p.beta, z);
        v.grad_dot_all(traj.states[k], z, gdots, pow_scratch);
        v.time_powers(traj.grid.node(k), tp);
        for (int j = 0; j < v.time_degree(); ++j) {
            const double w = tp[j];
            if (w == 0.0) continue;
            double* row = out.grad_theta.row(j);
            for (int i = 0; i < v.basis_size(); ++i) row[i] += w * gdots[i];
        }
    };

    Vec gg;
    p.grad_g(traj.states[N], gg);

    if (p.scheme == Scheme::ExplicitEuler) {
        // p_N = -grad g;  p_k = p_{k+1} + h (DF_k^T p_{k+1} - gradL_k)
        std::vector<Vec> padj(N + 1);
        padj[N] = scaled(gg, -1.0);
        Vec tmp(p.dim);
        for (int k = N - 1; k >= 0; --k) {
            matvec_transposed(nodes.DF[k], padj[k + 1], tmp);
            Vec pk = padj[k + 1];
            axpy(h, tmp, pk);
            axpy(-h, nodes.grad_L[k], pk);
            padj[k] = std::move(pk);
        }
        for (int k = 0; k < N; ++k) {
            zeta = nodes.grad_v[k];
            axpy(1.0, padj[k + 1], zeta);
            for (double& q : zeta) q *= h;
            accumulate_node(k, zeta);
        }
        out.grad_y0 = scaled(padj[0], -1.0);
    } else {
        // Interval multipliers of the discrete trapezoidal scheme:
        //   E_N^T psi_N = w_N gradL_N + grad g
        //   E_k^T psi_k = w_k gradL_k + A_k^T psi_{k+1}
        std::vector<Vec> psi(N + 1);
        Matrix E(p.dim, p.dim);
        Vec rhs(p.dim), tmp(p.dim);
        auto factor_E = [&](int k) {
            const Matrix& DF = nodes.DF[k];
            for (int r = 0; r < p.dim; ++r)
                for (int c = 0; c < p.dim; ++c)
                    E(r, c) = (r == c ? 1.0 : 0.0) - 0.5 * h * DF(r, c);
            return LuFactorization(E);
        };
        {
            rhs = gg;
            axpy(0.5 * h, nodes.grad_L[N], rhs);
            LuFactorization lu = factor_E(N);
            if (lu.singular()) throw std::runtime_error("sample_gradient: singular CN system");
            lu.solve_transposed(rhs);
            psi[N] = rhs;
        }
        for (int k = N - 1; k >= 1; --k) {
            matvec_transposed(nodes.DF[k], psi[k + 1], tmp);
            rhs = psi[k + 1];
            axpy(0.5 * h, tmp, rhs);
            axpy(h, nodes.grad_L[k], rhs);
            LuFactorization lu = factor_E(k);
            if (lu.singular()) throw std::runtime_error("sample_gradient: singular CN system");
            lu.solve_transposed(rhs);
            psi[k] = rhs;
        }
        for (int k = 0; k <= N; ++k) {
            const double w = (k == 0 || k == N) ? 0.5 * h : h;
            zeta = scaled(nodes.grad_v[k], w);
            if (k >= 1) axpy(-0.5 * h, psi[k], zeta);
            if (k <= N - 1) axpy(-0.5 * h, psi[k + 1], zeta);
            accumulate_node(k, zeta);
        }
        // grad_{y0} V = w_0 gradL_0 + A_0^T psi_1, reported as -p(t0)
        matvec_transposed(nodes.DF[0], psi[1], tmp);
        Vec lambda0 = psi[1];
        axpy(0.5 * h, tmp, lambda0);
        axpy(0.5 * h, nodes.grad_L[0], lambda0);
        out.grad_y0 = lambda0;
    }
    if (!all_finite(out.grad_theta.data()) || !all_finite(out.grad_y0))
        throw std::runtime_error("sample_gradient: numeric overflow");
    out.valid = true;
    return out;
}

template <class Surrogate>
SampleGradient sample_gradient(const FeedbackLaw<Surrogate>& law, double t0, const Vec& y0,
                               int steps = 0) {
    const int n = steps > 0 ? steps : law.problem->default_steps;
    Trajectory traj = rollout(law, TimeGrid(t0, law.problem->T, n), y0);
    return sample_gradient_from_trajectory(law, traj);
}

struct ObjectiveGradient {
    double value = std::numeric_limits<double>::infinity();
    Vec grad_flat;
    bool valid = false;
    int diverged = 0;
};

/// Monte Carlo objective: mean of eval_V over the samples; +inf (and an invalid
/// gradient) as soon as one rollout diverges. Reduction runs in sample order.
template <class Surrogate>
ObjectiveGradient objective_and_gradient(const FeedbackLaw<Surrogate>& law,
                                         const std::vector<std::pair<double, Vec>>& samples,
                                         int steps = 0, int workers = 0) {
    if (samples.empty()) throw std::invalid_argument("objective_and_gradient: empty sample list");
    const int n = steps > 0 ? steps : law.problem->default_steps;
    std::vector<SampleGradient> per(samples.size());
    std::vector<char> bad(samples.size(), 0);
    parallel_for(samples.size(), workers, [&](std::size_t i) {
        Trajectory traj = rollout(law, TimeGrid(samples[i].first, law.problem->T, n),
                                  samples[i].second);
        if (traj.diverged) {
            bad[i] = 1;
            return;
        }
        per[i] = sample_gradient_from_trajectory(law, traj);
    });
    ObjectiveGradient out;
    const auto np = static_cast<std::size_t>(law.surrogate->parameter_count());
    out.grad_flat.assign(np, 0.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (bad[i]) {
            ++out.diverged;
            continue;
        }
        sum += per[i].value;
        const Vec& g = per[i].grad_theta.data();
        for (std::size_t j = 0; j < np; ++j) out.grad_flat[j] += g[j];
    }
    if (out.diverged > 0) {
        out.value = std::numeric_limits<double>::infinity();
        out.valid = false;
        return out;
    }
    const double inv_n = 1.0 / static_cast<double>(samples.size());
    out.value = sum * inv_n;
    for (double& g : out.grad_flat) g *= inv_n;
    out.valid = true;
    return out;
}

/// Mean rollout cost only (no adjoint), used by the optimizer's line search.
template <class Surrogate>
double objective_value(const FeedbackLaw<Surrogate>& law,
                       const std::vector<std::pair<double, Vec>>& samples, int steps = 0,
                       int workers = 0) {
    if (samples.empty()) throw std::invalid_argument("objective_value: empty sample list");
    const int n = steps > 0 ? steps : law.problem->default_steps;
    std::vector<double> vals(samples.size(), 0.0);
    parallel_for(samples.size(), workers, [&](std::size_t i) {
        vals[i] = rollout(law, TimeGrid(samples[i].first, law.problem->T, n), samples[i].second)
                      .total_cost();
    });
    double sum = 0.0;
    for (double v : vals) {
        if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
        sum += v;
    }
    return sum / static_cast<double>(samples.size());
}

/// Diagnostic identity check for the initial-time derivative of the rollout
/// cost: central differences of eval_V in t0 against the adjoint expression
///   dV/dt0 = -ell(t0,y0) - (beta/2)|U_v|^2 + p(t0) . (f + B U_v).
/// Returns the relative gap; it decays with the grid and is logged by tests,
/// never "corrected".
template <class Surrogate>
double t0_derivative_identity_gap(const FeedbackLaw<Surrogate>& law, double t0, const Vec& y0,
                                  int steps) {
    const ControlProblem& p = *law.problem;
    Trajectory traj = rollout(law, TimeGrid(t0, p.T, steps), y0);
    if (traj.diverged) return std::numeric_limits<double>::infinity();
    const AdjointPath path = solve_adjoint(law, traj);
    SurrogateEval e;
    law.surrogate->eval_full(t0, y0, e);
    Vec u;
    feedback_from_grad(p, e.grad, u);
    Vec rhs;
    p.f(t0, y0, rhs);
    for (int r = 0; r < p.dim; ++r) {
        double s = 0.0;
        for (int m = 0; m < p.control_dim; ++m) s += p.B(r, m) * u[m];
        rhs[r] += s;
    }
    const double formula = -p.ell(t0, y0) - 0.5 * p.beta * dot(u, u) + dot(path.p[0], rhs);
    const double dt = 1e-5 * p.T;
    const double fd =
        (eval_V(law, t0 + dt, y0, steps) - eval_V(law, t0 - dt, y0, steps)) / (2.0 * dt);
    return std::abs(fd - formula) / std::max(1.0, std::abs(formula));
}

/// Residual of the HJB equation with the minimized Hamiltonian substituted:
///   dv/dt + ell + grad_v . f - 1/(2 beta) |B^T grad_v|^2.
/// Diagnostic only; zero for the true value function.
template <class Surrogate>
double hjb_residual(const ControlProblem& p, const Surrogate& v, double t, const Vec& y) {
    SurrogateEval e;
    v.eval_full(t, y, e);
    Vec f;
    p.f(t, y, f);
    Vec btg(p.control_dim);
    matvec_transposed(p.B, e.grad, btg);
    return e.dt + p.ell(t, y) + dot(e.grad, f) - dot(btg, btg) / (2.0 * p.beta);
}

/// Terminal slice mismatch |v(T, y) - g(y)|, reported next to the residual.
template <class Surrogate>
double hjb_terminal_gap(const ControlProblem& p, const Surrogate& v, const Vec& y) {
    SurrogateEval e;
    v.eval_full(p.T, y, e);
    return std::abs(e.value - p.g(y));
}

/// HJB residual of the closed-loop cost-to-go (the function (t0, y0) ->
/// rollout cost), averaged along the sample trajectories. Substituting the
/// adjoint identities for its derivatives collapses the residual to
///   -(1/(2 beta)) |B^T (grad_y v + p)|^2,
/// the pointwise stationarity defect of the learning objective, so this is
/// the quantity that vanishes at stationary surrogates.
template <class Surrogate>
double mean_cost_to_go_hjb_residual(const FeedbackLaw<Surrogate>& law,
                                    const std::vector<std::pair<double, Vec>>& samples,
                                    int steps = 0) {
    const ControlProblem& prob = *law.problem;
    const int n = steps > 0 ? steps : prob.default_steps;
    SurrogateEval e;
    Vec mismatch(prob.control_dim);
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& [t0, y0] : samples) {
        Trajectory traj = rollout(law, TimeGrid(t0, prob.T, n), y0);
        if (traj.diverged) return std::numeric_limits<double>::infinity();
        const AdjointPath path = solve_adjoint(law, traj);
        for (int k = 0; k <= traj.grid.steps; ++k) {
            law.surrogate->eval_full(traj.grid.node(k), traj.states[k], e);
            axpy(1.0, path.p[k], e.grad);
            matvec_transposed(prob.B, e.grad, mismatch);
            acc += dot(mismatch, mismatch) / (2.0 * prob.beta);
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

/// Mean |hjb_residual| of the surrogate itself over the nodes of the
/// closed-loop rollouts from the given samples (diagnostic companion to the
/// cost-to-go residual; a B-filtered basis keeps this one bounded away from
/// zero even at stationarity).
template <class Surrogate>
double mean_hjb_residual(const FeedbackLaw<Surrogate>& law,
                         const std::vector<std::pair<double, Vec>>& samples, int steps = 0) {
    const int n = steps > 0 ? steps : law.problem->default_steps;
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& [t0, y0] : samples) {
        Trajectory traj = rollout(law, TimeGrid(t0, law.problem->T, n), y0);
        if (traj.diverged) return std::numeric_limits<double>::infinity();
        for (int k = 0; k <= traj.grid.steps; ++k) {
            acc += std::abs(hjb_residual(*law.problem, *law.surrogate, traj.grid.node(k),
                                         traj.states[k]));
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

}  // namespace polyfeed
