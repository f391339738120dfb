#pragma once

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "polyfeed/chebyshev.hpp"
#include "polyfeed/dynamics.hpp"

namespace polyfeed {

/// System matrix of the linearized cart-pendulum with time-dependent cart
/// mass M_c(t) = exp(-10 t) + 1 (friction F_r = 1, g = 9.8, L = 0.842).
inline Matrix pendulum_a_matrix(double t) {
    const double mc = std::exp(-10.0 * t) + 1.0;
    const double mc_dot = -10.0 * std::exp(-10.0 * t);
    Matrix A(4, 4);
    A(0, 1) = 1.0;
    A(1, 1) = -(1.0 + mc_dot) / mc;
    A(2, 3) = 1.0;
    A(3, 0) = -9.8 / 0.842;
    A(3, 2) = 9.8 / 0.842;
    return A;
}

/// Linearized inverted pendulum on a car; quadratic costs, control enters the
/// cart velocity equation.
inline ControlProblem build_pendulum(double alpha_terminal, double beta, int N_t = 100,
                                     double R_max = 1e3) {
    if (alpha_terminal <= 0 || beta <= 0 || N_t < 1)
        throw std::invalid_argument("build_pendulum: bad parameters");
    ControlProblem p;
    p.name = "pendulum";
    p.dim = 4;
    p.control_dim = 1;
    p.B = Matrix(4, 1);
    p.B(1, 0) = 1.0;
    p.beta = beta;
    p.T = 1.0;
    p.f = [](double t, const Vec& y, Vec& out) {
        const double mc = std::exp(-10.0 * t) + 1.0;
        const double a11 = -(1.0 - 10.0 * std::exp(-10.0 * t)) / mc;
        out.resize(4);
        out[0] = y[1];
        out[1] = a11 * y[1];
        out[2] = y[3];
        out[3] = (9.8 / 0.842) * (y[2] - y[0]);
    };
    p.df_y = [](double t, const Vec&, Matrix& out) {
        out.resize(4, 4);
        const double mc = std::exp(-10.0 * t) + 1.0;
        out(0, 1) = 1.0;
        out(1, 1) = -(1.0 - 10.0 * std::exp(-10.0 * t)) / mc;
        out(2, 3) = 1.0;
        out(3, 0) = -9.8 / 0.842;
        out(3, 2) = 9.8 / 0.842;
    };
    p.ell = [](double, const Vec& y) { return 0.5 * dot(y, y); };
    p.grad_ell = [](double, const Vec& y, Vec& out) { out = y; };
    p.g = [alpha_terminal](const Vec& y) { return 0.5 * alpha_terminal * dot(y, y); };
    p.grad_g = [alpha_terminal](const Vec& y, Vec& out) { out = scaled(y, alpha_terminal); };
    p.sample_y0 = [](Rng& rng) { return rng.uniform_vec(4, -0.5, 0.5); };
    p.t0_min = 0.0;
    p.t0_max = 1.0;
    p.R_max = R_max;
    p.scheme = Scheme::ExplicitEuler;
    p.default_steps = N_t;
    p.space_scale = 0.5;
    validate_derivatives(p);
    return p;
}

/// Allen-Cahn equation on (-1, 1) with homogeneous Neumann boundary,
/// discretized by Chebyshev collocation (interior unknowns only) and
/// Clenshaw-Curtis cost weights; three indicator-supported controls.
inline ControlProblem build_allen_cahn(double alpha_terminal, double beta, int N_t = 200,
                                       double R_max = 100.0) {
    if (alpha_terminal <= 0 || beta <= 0 || N_t < 1)
        throw std::invalid_argument("build_allen_cahn: bad parameters");
    constexpr double nu = 0.5;
    const int N = 40;  // 39 interior degrees of freedom
    auto red = std::make_shared<NeumannReduced>(build_neumann_reduced(N));
    const int d = N - 1;
    ControlProblem p;
    p.name = "allen_cahn";
    p.dim = d;
    p.control_dim = 3;
    p.B = Matrix(d, 3);
    const double lo[3] = {-0.7, -0.2, 0.4};
    const double hi[3] = {-0.4, 0.2, 0.7};
    for (int j = 0; j < d; ++j) {
        const double x = red->interior_nodes[j];
        for (int i = 0; i < 3; ++i)
            if (x > lo[i] && x < hi[i]) p.B(j, i) = 1.0;
    }
    p.beta = beta;
    p.T = 4.0;
    auto lap = std::make_shared<Matrix>(red->laplacian);
    for (auto& v : lap->data()) v *= nu;
    p.f = [lap](double, const Vec& y, Vec& out) {
        matvec(*lap, y, out);
        for (std::size_t i = 0; i < y.size(); ++i) out[i] += y[i] * (1.0 - y[i] * y[i]);
    };
    p.df_y = [lap, d](double, const Vec& y, Matrix& out) {
        out = *lap;
        for (int i = 0; i < d; ++i) out(i, i) += 1.0 - 3.0 * y[i] * y[i];
    };
    auto w = std::make_shared<Vec>(red->weights);
    p.ell = [w](double, const Vec& y) {
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += (*w)[i] * y[i] * y[i];
        return s;
    };
    p.grad_ell = [w](double, const Vec& y, Vec& out) {
        out.resize(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) out[i] = 2.0 * (*w)[i] * y[i];
    };
    p.g = [w, alpha_terminal](const Vec& y) {
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += (*w)[i] * y[i] * y[i];
        return 0.5 * alpha_terminal * s;
    };
    p.grad_g = [w, alpha_terminal](const Vec& y, Vec& out) {
        out.resize(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) out[i] = alpha_terminal * (*w)[i] * y[i];
    };
    p.sample_y0 = [d](Rng& rng) { return rng.uniform_vec(d, -10.0, 10.0); };
    p.t0_min = 0.0;
    p.t0_max = 1.0;
    p.R_max = R_max;
    p.scheme = Scheme::CrankNicolson;
    p.default_steps = N_t;
    p.space_scale = 10.0;
    validate_derivatives(p);
    return p;
}

struct MultiAgentLayout {
    int agents = 10;
    int obstacles = 4;
    double r_o = 0.2;
    double r_a = 0.1;
    double sigma1 = 10.0;
    double sigma2 = 10.0;
    double sigma3 = 100.0;
    std::vector<std::pair<double, double>> obstacle_pos;
    std::vector<std::pair<double, double>> target_pos;
};

inline MultiAgentLayout multi_agent_layout() {
    MultiAgentLayout lay;
    for (int i = 0; i < lay.obstacles; ++i) {
        const double a = 2.0 * (i)*M_PI / lay.obstacles;
        lay.obstacle_pos.emplace_back(0.5 * std::cos(a), 0.5 * std::sin(a));
    }
    for (int i = 0; i < lay.agents; ++i) {
        const double a = 2.0 * (i)*M_PI / lay.agents;
        lay.target_pos.emplace_back(0.5 * std::cos(a), 0.5 * std::sin(a));
    }
    return lay;
}

/// Ten planar agents steered by their velocities around four obstacles toward
/// per-agent targets. Gaussian kernels penalize agent-obstacle and agent-agent
/// proximity; the quadratic control cost carries the 1/N_a agent averaging, so
/// the problem-level beta is the configured beta divided by the agent count.
inline ControlProblem build_multi_agent(double beta, int N_t = 100, double T = 1.0,
                                        double R_max = 100.0) {
    if (beta <= 0 || N_t < 1 || T <= 0)
        throw std::invalid_argument("build_multi_agent: bad parameters");
    auto lay = std::make_shared<MultiAgentLayout>(multi_agent_layout());
    const int na = lay->agents;
    const int d = 2 * na;
    ControlProblem p;
    p.name = "multi_agent";
    p.dim = d;
    p.control_dim = d;
    p.B = Matrix::identity(d);
    p.beta = beta / na;
    p.T = T;
    p.f = [d](double, const Vec&, Vec& out) { out.assign(d, 0.0); };
    p.df_y = [d](double, const Vec&, Matrix& out) { out.resize(d, d); };
    const double q_norm = 1.0 / (lay->agents * lay->obstacles);
    const double w_norm = 2.0 / (lay->agents * (lay->agents - 1.0));
    p.ell = [lay, q_norm, w_norm](double, const Vec& y) {
        double q = 0.0, wsum = 0.0;
        for (int i = 0; i < lay->agents; ++i) {
            const double xi = y[2 * i], yi = y[2 * i + 1];
            for (const auto& [ox, oy] : lay->obstacle_pos) {
                const double dx = xi - ox, dy = yi - oy;
                q += std::exp(-(dx * dx + dy * dy) / (2.0 * lay->r_o * lay->r_o));
            }
            for (int j = i + 1; j < lay->agents; ++j) {
                const double dx = xi - y[2 * j], dy = yi - y[2 * j + 1];
                wsum += std::exp(-(dx * dx + dy * dy) / (2.0 * lay->r_a * lay->r_a));
            }
        }
        return lay->sigma1 * q_norm * q + lay->sigma2 * w_norm * wsum;
    };
    p.grad_ell = [lay, q_norm, w_norm, d](double, const Vec& y, Vec& out) {
        out.assign(d, 0.0);
        const double co = lay->sigma1 * q_norm / (lay->r_o * lay->r_o);
        const double ca = lay->sigma2 * w_norm / (lay->r_a * lay->r_a);
        for (int i = 0; i < lay->agents; ++i) {
            const double xi = y[2 * i], yi = y[2 * i + 1];
            for (const auto& [ox, oy] : lay->obstacle_pos) {
                const double dx = xi - ox, dy = yi - oy;
                const double k = std::exp(-(dx * dx + dy * dy) / (2.0 * lay->r_o * lay->r_o));
                out[2 * i] -= co * k * dx;
                out[2 * i + 1] -= co * k * dy;
            }
            for (int j = i + 1; j < lay->agents; ++j) {
                const double dx = xi - y[2 * j], dy = yi - y[2 * j + 1];
                const double k = std::exp(-(dx * dx + dy * dy) / (2.0 * lay->r_a * lay->r_a));
                out[2 * i] -= ca * k * dx;
                out[2 * i + 1] -= ca * k * dy;
                out[2 * j] += ca * k * dx;
                out[2 * j + 1] += ca * k * dy;
            }
        }
    };
    const double g_scale = lay->sigma3 / (2.0 * na);
    p.g = [lay, g_scale](const Vec& y) {
        double s = 0.0;
        for (int i = 0; i < lay->agents; ++i) {
            const double dx = y[2 * i] - lay->target_pos[i].first;
            const double dy = y[2 * i + 1] - lay->target_pos[i].second;
            s += dx * dx + dy * dy;
        }
        return g_scale * s;
    };
    p.grad_g = [lay, g_scale, d](const Vec& y, Vec& out) {
        out.resize(d);
        for (int i = 0; i < lay->agents; ++i) {
            out[2 * i] = 2.0 * g_scale * (y[2 * i] - lay->target_pos[i].first);
            out[2 * i + 1] = 2.0 * g_scale * (y[2 * i + 1] - lay->target_pos[i].second);
        }
    };
    p.sample_y0 = [na](Rng& rng) {
        Vec y(2 * na);
        for (int i = 0; i < na; ++i) {
            const double rho = rng.uniform(0.8, 2.0);
            const double a0 = 2.0 * M_PI * i / na;
            const double a = rng.uniform(a0, a0 + 2.0 * M_PI / na);
            y[2 * i] = rho * std::cos(a);
            y[2 * i + 1] = rho * std::sin(a);
        }
        return y;
    };
    p.t0_min = 0.0;
    p.t0_max = T;
    p.R_max = R_max;
    p.scheme = Scheme::ExplicitEuler;
    p.default_steps = N_t;
    p.space_scale = 2.0;
    validate_derivatives(p);
    return p;
}

/// (t0, y0) pairs: t0 uniform on the problem's initial-time interval, y0 from
/// its sampling region; fully determined by the seed.
inline std::vector<std::pair<double, Vec>> sample_initial_conditions(const ControlProblem& p,
                                                                     int n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_initial_conditions: need n >= 1");
    Rng rng(seed);
    std::vector<std::pair<double, Vec>> samples;
    samples.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double t0 = rng.uniform(p.t0_min, p.t0_max);
        samples.emplace_back(t0, p.sample_y0(rng));
    }
    return samples;
}

}  // namespace polyfeed
