#pragma once

#include <algorithm>
#include <functional>
#include <stdexcept>
#include <string>

#include "polyfeed/basis.hpp"
#include "polyfeed/linalg.hpp"
#include "polyfeed/rng.hpp"

namespace polyfeed {

enum class Scheme { ExplicitEuler, CrankNicolson };

inline std::string to_string(Scheme s) {
    return s == Scheme::ExplicitEuler ? "explicit_euler" : "crank_nicolson";
}

/// Finite horizon control problem
///   min  int_{t0}^{T} ( ell(t,y) + beta/2 |u|^2 ) dt + g(y(T)),
///   s.t. y' = f(t,y) + B u.
/// Derivative callbacks are analytic; validate_derivatives() cross-checks them
/// against finite differences once at construction time.
struct ControlProblem {
    std::string name;
    int dim = 0;
    int control_dim = 0;
    Matrix B;  // dim x control_dim
    double beta = 1.0;
    double T = 1.0;

    std::function<void(double, const Vec&, Vec&)> f;
    std::function<void(double, const Vec&, Matrix&)> df_y;
    std::function<double(double, const Vec&)> ell;
    std::function<void(double, const Vec&, Vec&)> grad_ell;
    std::function<double(const Vec&)> g;
    std::function<void(const Vec&, Vec&)> grad_g;

    /// Uniform sampler over the training region omega (y0 only).
    std::function<Vec(Rng&)> sample_y0;
    double t0_min = 0.0;
    double t0_max = 1.0;

    double R_max = 1e3;  // sup-norm state guard; beyond it a rollout counts as diverged
    Scheme scheme = Scheme::ExplicitEuler;
    int default_steps = 100;
    double space_scale = 1.0;
};

/// u = -(1/beta) B^T grad_y v for a fixed surrogate v.
template <class Surrogate>
struct FeedbackLaw {
    const ControlProblem* problem = nullptr;
    const Surrogate* surrogate = nullptr;
};

template <class Surrogate>
FeedbackLaw<Surrogate> make_feedback_law(const ControlProblem& p, const Surrogate& s) {
    return FeedbackLaw<Surrogate>{&p, &s};
}

/// Control from an already evaluated surrogate gradient.
inline void feedback_from_grad(const ControlProblem& p, const Vec& grad_v, Vec& u) {
    matvec_transposed(p.B, grad_v, u);
    const double scale = -1.0 / p.beta;
    for (double& v : u) v *= scale;
}

template <class Surrogate>
Vec feedback(const FeedbackLaw<Surrogate>& law, double t, const Vec& y) {
    SurrogateEval e;
    law.surrogate->eval_full(t, y, e);
    Vec u;
    feedback_from_grad(*law.problem, e.grad, u);
    return u;
}

/// D_y U_v = -(1/beta) B^T hess_y v, an M x d matrix.
template <class Surrogate>
Matrix feedback_jacobian(const FeedbackLaw<Surrogate>& law, double t, const Vec& y) {
    SurrogateEval e;
    law.surrogate->eval_full(t, y, e);
    const ControlProblem& p = *law.problem;
    Matrix j(p.control_dim, p.dim);
    for (int m = 0; m < p.control_dim; ++m)
        for (int c = 0; c < p.dim; ++c) {
            double s = 0.0;
            for (int r = 0; r < p.dim; ++r) s += p.B(r, m) * e.hess(r, c);
            j(m, c) = -s / p.beta;
        }
    return j;
}

namespace detail {

/// F = f + B u and optionally DF = Df_y - (1/beta) B B^T hess_v, reusing an
/// externally computed surrogate evaluation.
inline void closed_loop_from_eval(const ControlProblem& p, double t, const Vec& y,
                                  const SurrogateEval& e, Vec& u, Vec& F, Matrix* DF) {
    feedback_from_grad(p, e.grad, u);
    p.f(t, y, F);
    for (int r = 0; r < p.dim; ++r) {
        double s = 0.0;
        for (int m = 0; m < p.control_dim; ++m) s += p.B(r, m) * u[m];
        F[r] += s;
    }
    if (DF) {
        p.df_y(t, y, *DF);
        // DF -= (1/beta) B (B^T H)
        for (int m = 0; m < p.control_dim; ++m) {
            for (int c = 0; c < p.dim; ++c) {
                double bth = 0.0;
                for (int r = 0; r < p.dim; ++r) bth += p.B(r, m) * e.hess(r, c);
                if (bth == 0.0) continue;
                bth /= p.beta;
                for (int r = 0; r < p.dim; ++r) (*DF)(r, c) -= p.B(r, m) * bth;
            }
        }
    }
}

}  // namespace detail

template <class Surrogate>
void closed_loop_rhs(const FeedbackLaw<Surrogate>& law, double t, const Vec& y, Vec& F,
                     Matrix* DF = nullptr) {
    SurrogateEval e;
    law.surrogate->eval_full(t, y, e);
    Vec u;
    detail::closed_loop_from_eval(*law.problem, t, y, e, u, F, DF);
}

/// Cross-checks df_y, grad_ell and grad_g against central differences at a few
/// points drawn from the sampling region. Throws on disagreement.
inline void validate_derivatives(const ControlProblem& p, std::uint64_t seed = 31,
                                 int points = 3, double rel_tol = 2e-4) {
    Rng rng(seed);
    const double step = 1e-6 * std::max(1.0, p.space_scale);
    for (int q = 0; q < points; ++q) {
        Vec y = p.sample_y0(rng);
        const double t = rng.uniform(p.t0_min, std::min(p.t0_max, p.T));
        Matrix J;
        p.df_y(t, y, J);
        Vec gl;
        p.grad_ell(t, y, gl);
        Vec gg;
        p.grad_g(y, gg);
        Vec yp = y, ym = y, fp, fm;
        double max_scale = 1.0;
        for (int i = 0; i < p.dim; ++i) max_scale = std::max(max_scale, std::abs(J(i, i)));
        for (int c = 0; c < p.dim; ++c) {
            yp[c] = y[c] + step;
            ym[c] = y[c] - step;
            p.f(t, yp, fp);
            p.f(t, ym, fm);
            for (int r = 0; r < p.dim; ++r) {
                const double fd = (fp[r] - fm[r]) / (2 * step);
                const double scale = std::max({1.0, std::abs(J(r, c)), max_scale});
                if (std::abs(fd - J(r, c)) > rel_tol * scale)
                    throw std::runtime_error(p.name + ": df_y fails finite-difference check");
            }
            const double el_fd = (p.ell(t, yp) - p.ell(t, ym)) / (2 * step);
            if (std::abs(el_fd - gl[c]) > rel_tol * std::max(1.0, std::abs(gl[c])))
                throw std::runtime_error(p.name + ": grad_ell fails finite-difference check");
            const double g_fd = (p.g(yp) - p.g(ym)) / (2 * step);
            if (std::abs(g_fd - gg[c]) > rel_tol * std::max(1.0, std::abs(gg[c])))
                throw std::runtime_error(p.name + ": grad_g fails finite-difference check");
            yp[c] = y[c];
            ym[c] = y[c];
        }
    }
}

}  // namespace polyfeed
