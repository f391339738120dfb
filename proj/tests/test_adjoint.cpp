#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "polyfeed/problems.hpp"
#include "test_support.hpp"

using namespace polyfeed;
using testsup::QuadraticSurrogate;
using testsup::RiccatiSurrogate;

namespace {

RiccatiSurrogate pendulum_riccati_surrogate(const ControlProblem& p, double alpha, int steps) {
    RiccatiSurrogate s;
    s.grid = TimeGrid(0.0, p.T, steps);
    s.A = pendulum_a_matrix;
    s.B = p.B;
    s.beta = p.beta;
    s.P = riccati_oracle(s.A, s.B, s.beta, alpha, s.grid);
    return s;
}

}  // namespace

TEST_CASE("eval_V vanishes on the costless problem") {
    ControlProblem p = testsup::scalar_problem(-0.5, 1.0, 1.0, 0.0, 0.0, 1.0,
                                               Scheme::ExplicitEuler, 50);
    QuadraticSurrogate zero{Matrix(1, 1), {}};
    auto law = make_feedback_law(p, zero);
    CHECK(eval_V(law, 0.0, {0.7}) == 0.0);
}

TEST_CASE("eval_V of the Riccati surrogate matches the LQ value at first order") {
    const double alpha = 1.0, beta = 0.1;
    ControlProblem p = build_pendulum(alpha, beta);
    const RiccatiSurrogate vstar = pendulum_riccati_surrogate(p, alpha, 4000);
    auto law = make_feedback_law(p, vstar);
    Rng rng(8);
    double err_coarse = 0.0, err_fine = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        const double t0 = rng.uniform(0.0, 0.9);
        const Vec y0 = rng.uniform_vec(4, -0.5, 0.5);
        const Matrix P0 = vstar.p_at(t0);
        Vec py;
        matvec(P0, y0, py);
        const double value = 0.5 * dot(y0, py);
        const double vc = eval_V(law, t0, y0, 500);
        const double vf = eval_V(law, t0, y0, 1000);
        err_coarse += std::abs(vc - value) / value;
        err_fine += std::abs(vf - value) / value;
        CHECK(std::abs(vf - value) / value < 5e-3);
    }
    CHECK(err_coarse / err_fine > 1.5);  // first-order convergence in h
    CHECK(err_coarse / err_fine < 2.6);
}

TEST_CASE("surrogate cost dominates the optimal LQ value") {
    const double alpha = 1.0, beta = 0.1;
    ControlProblem p = build_pendulum(alpha, beta, 2000);
    const RiccatiSurrogate vstar = pendulum_riccati_surrogate(p, alpha, 4000);
    Rng rng(12);
    for (int trial = 0; trial < 4; ++trial) {
        QuadraticSurrogate v{Matrix(4, 4), {}};
        for (int i = 0; i < 4; ++i)
            for (int j = i; j < 4; ++j) v.P(i, j) = v.P(j, i) = rng.uniform(-0.4, 0.8);
        auto law = make_feedback_law(p, v);
        const double t0 = rng.uniform(0.0, 0.8);
        const Vec y0 = rng.uniform_vec(4, -0.5, 0.5);
        const double value_v = eval_V(law, t0, y0);
        const Matrix P0 = vstar.p_at(t0);
        Vec py;
        matvec(P0, y0, py);
        const double value_star = 0.5 * dot(y0, py);
        CHECK(value_v >= value_star - 2e-2 * std::max(1.0, value_star));
    }
}

TEST_CASE("solve_adjoint: trivial and constant cases") {
    ControlProblem p = testsup::scalar_problem(-0.5, 1.0, 1.0, 0.0, 0.0, 1.0,
                                               Scheme::ExplicitEuler, 40);
    QuadraticSurrogate zero{Matrix(1, 1), {}};
    auto law = make_feedback_law(p, zero);
    Trajectory traj = euler_rollout(law, TimeGrid(0, 1, 40), {0.3});
    AdjointPath path = solve_adjoint(law, traj);
    for (const auto& pk : path.p) CHECK(pk[0] == 0.0);

    // ell = 0, f = 0, B inert: p stays at -grad g
    ControlProblem frozen = testsup::scalar_problem(0.0, 0.0, 1.0, 0.0, 2.0, 1.0,
                                                    Scheme::ExplicitEuler, 25);
    auto law2 = make_feedback_law(frozen, zero);
    Trajectory traj2 = euler_rollout(law2, TimeGrid(0, 1, 25), {0.4});
    AdjointPath path2 = solve_adjoint(law2, traj2);
    for (const auto& pk : path2.p) CHECK(pk[0] == doctest::Approx(-2.0 * 0.4).epsilon(1e-12));
}

TEST_CASE("solve_adjoint tracks -P(t) y(t) on the LQ problem") {
    const double alpha = 1.0, beta = 0.1;
    for (Scheme scheme : {Scheme::ExplicitEuler, Scheme::CrankNicolson}) {
        ControlProblem p = build_pendulum(alpha, beta, 800);
        p.scheme = scheme;
        const RiccatiSurrogate vstar = pendulum_riccati_surrogate(p, alpha, 4000);
        auto law = make_feedback_law(p, vstar);
        const TimeGrid grid(0.1, 1.0, 800);
        const Vec y0 = {0.3, -0.2, 0.4, 0.1};
        Trajectory traj = rollout(law, grid, y0);
        REQUIRE(!traj.diverged);
        AdjointPath path = solve_adjoint(law, traj);
        CHECK(path.p[800].size() == 4);
        // terminal condition is exact
        Vec gg;
        p.grad_g(traj.states[800], gg);
        for (int i = 0; i < 4; ++i) CHECK(path.p[800][i] == -gg[i]);
        double max_rel = 0.0;
        for (int k = 0; k <= 800; k += 80) {
            const Matrix Pk = vstar.p_at(grid.node(k));
            Vec py;
            matvec(Pk, traj.states[k], py);
            Vec diff = path.p[k];
            axpy(1.0, py, diff);  // p + P y should vanish
            max_rel = std::max(max_rel, norm2(diff) / std::max(1e-9, norm2(py)));
        }
        CHECK(max_rel < 2e-2);
    }
}

TEST_CASE("theta gradient: structural zeros") {
    // B = 0 kills the gradient integrand
    ControlProblem p = testsup::scalar_problem(-0.4, 0.0, 1.0, 1.0, 1.0, 1.0,
                                               Scheme::ExplicitEuler, 30);
    PolynomialAnsatz a(2, enumerate_total_degree(1, 2), 1.0, 1.0);
    a.theta()(0, 1) = 0.3;
    auto law = make_feedback_law(p, a);
    SampleGradient sg = sample_gradient(law, 0.0, {0.5});
    CHECK(norm_inf(sg.grad_theta.data()) == 0.0);

    // theta = 0 with zero costs: p = 0 and grad v = 0
    ControlProblem p2 = testsup::scalar_problem(-0.4, 1.0, 1.0, 0.0, 0.0, 1.0,
                                                Scheme::ExplicitEuler, 30);
    PolynomialAnsatz z(2, enumerate_total_degree(1, 2), 1.0, 1.0);
    auto law2 = make_feedback_law(p2, z);
    SampleGradient sg2 = sample_gradient(law2, 0.0, {0.5});
    CHECK(norm_inf(sg2.grad_theta.data()) == 0.0);
    CHECK(sg2.value == 0.0);
}

TEST_CASE("theta gradient matches finite differences of eval_V") {
    for (auto [scheme, steps, tol] :
         {std::tuple{Scheme::ExplicitEuler, 200, 1e-4}, {Scheme::CrankNicolson, 200, 1e-5}}) {
        ControlProblem p = testsup::random_2d_problem(77, scheme, steps);
        Matrix B = p.B;
        PolynomialAnsatz a = make_ansatz(IndexSetKind::HyperbolicCross, 2, 3, B, 1.0, p.T);
        Rng rng(500 + static_cast<int>(scheme));
        const double t0 = 0.15;
        const Vec y0 = {0.6, -0.4};
        for (int trial = 0; trial < 3; ++trial) {
            for (auto& th : a.theta().data()) th = rng.uniform(-0.3, 0.3);
            auto law = make_feedback_law(p, a);
            const SampleGradient sg = sample_gradient(law, t0, y0, steps);
            REQUIRE(sg.valid);
            for (int idx = 0; idx < a.parameter_count(); ++idx) {
                const double saved = a.theta().data()[idx];
                const double h = 1e-6 * std::max(1.0, std::abs(saved));
                a.theta().data()[idx] = saved + h;
                const double vp = eval_V(law, t0, y0, steps);
                a.theta().data()[idx] = saved - h;
                const double vm = eval_V(law, t0, y0, steps);
                a.theta().data()[idx] = saved;
                const double fd = (vp - vm) / (2 * h);
                const double an = sg.grad_theta.data()[idx];
                CHECK(std::abs(fd - an) <= tol * std::max(1.0, std::abs(an)));
            }
        }
    }
}

TEST_CASE("objective_and_gradient: reductions behave like means") {
    ControlProblem p = testsup::random_2d_problem(91, Scheme::ExplicitEuler, 100);
    PolynomialAnsatz a = make_ansatz(IndexSetKind::HyperbolicCross, 2, 2, p.B, 1.0, p.T);
    Rng rng(6);
    for (auto& th : a.theta().data()) th = rng.uniform(-0.2, 0.2);
    auto law = make_feedback_law(p, a);
    const std::vector<std::pair<double, Vec>> samples = {
        {0.1, {0.3, 0.2}}, {0.4, {-0.5, 0.1}}, {0.0, {0.2, -0.7}}};

    auto single = objective_and_gradient(law, {samples[0]});
    auto direct = sample_gradient(law, samples[0].first, samples[0].second);
    CHECK(single.value == doctest::Approx(direct.value).epsilon(1e-15));
    for (int i = 0; i < a.parameter_count(); ++i)
        CHECK(single.grad_flat[i] == doctest::Approx(direct.grad_theta.data()[i]).epsilon(1e-15));

    auto base = objective_and_gradient(law, samples);
    std::vector<std::pair<double, Vec>> doubled = samples;
    doubled.insert(doubled.end(), samples.begin(), samples.end());
    auto twice = objective_and_gradient(law, doubled);
    CHECK(twice.value == doctest::Approx(base.value).epsilon(1e-14));
    for (int i = 0; i < a.parameter_count(); ++i)
        CHECK(twice.grad_flat[i] == doctest::Approx(base.grad_flat[i]).epsilon(1e-13));

    std::vector<std::pair<double, Vec>> shuffled = {samples[2], samples[0], samples[1]};
    auto perm = objective_and_gradient(law, shuffled);
    CHECK(perm.value == doctest::Approx(base.value).epsilon(1e-12));
    for (int i = 0; i < a.parameter_count(); ++i)
        CHECK(perm.grad_flat[i] == doctest::Approx(base.grad_flat[i]).epsilon(1e-12));

    CHECK_THROWS(objective_and_gradient(law, {}));
}

TEST_CASE("gradient with respect to the initial state equals -p(t0)") {
    const double alpha = 1.0, beta = 0.1;
    ControlProblem p = build_pendulum(alpha, beta, 400);
    Rng rng(21);
    QuadraticSurrogate v{Matrix(4, 4), {}};
    for (int i = 0; i < 4; ++i)
        for (int j = i; j < 4; ++j) v.P(i, j) = v.P(j, i) = rng.uniform(-0.3, 0.6);
    auto law = make_feedback_law(p, v);
    const double t0 = 0.25;
    Vec y0 = {0.2, -0.3, 0.1, 0.4};
    Trajectory traj = euler_rollout(law, TimeGrid(t0, 1.0, 400), y0);
    REQUIRE(!traj.diverged);
    AdjointPath path = solve_adjoint(law, traj);
    for (int c = 0; c < 4; ++c) {
        const double h = 1e-6;
        Vec yp = y0, ym = y0;
        yp[c] += h;
        ym[c] -= h;
        const double fp = eval_V(law, t0, yp, 400);
        const double fm = eval_V(law, t0, ym, 400);
        const double fd = (fp - fm) / (2 * h);
        CHECK(std::abs(fd - (-path.p[0][c])) <= 1e-3 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("hjb residual: exact value function, zero surrogate, terminal slice") {
    // y' = u, ell = y^2/2, beta = 1, g = 0: v = tanh(T - t) y^2 / 2 solves HJB
    ControlProblem p = testsup::scalar_problem(0.0, 1.0, 1.0, 1.0, 1e-12, 1.0,
                                               Scheme::ExplicitEuler, 100);
    p.g = [](const Vec&) { return 0.0; };
    p.grad_g = [](const Vec&, Vec& out) { out = {0.0}; };
    testsup::TanhSurrogate vstar{1.0};
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const double t = rng.uniform(0, 1);
        const Vec y = {rng.uniform(-2, 2)};
        CHECK(std::abs(hjb_residual(p, vstar, t, y)) < 1e-8);
    }
    CHECK(hjb_terminal_gap(p, vstar, {1.3}) < 1e-12);

    // v = 0 with ell = |y|^2 leaves exactly the running cost
    ControlProblem p2 = testsup::scalar_problem(0.3, 1.0, 1.0, 2.0, 1.0, 1.0,
                                                Scheme::ExplicitEuler, 100);
    QuadraticSurrogate zero{Matrix(1, 1), {}};
    const Vec y = {1.7};
    CHECK(hjb_residual(p2, zero, 0.4, y) == doctest::Approx(y[0] * y[0]));
}

TEST_CASE("rollout cost converges at second order under crank-nicolson") {
    const double alpha = 1.0, beta = 0.1;
    ControlProblem p = build_pendulum(alpha, beta, 800);
    p.scheme = Scheme::CrankNicolson;
    const RiccatiSurrogate vstar = pendulum_riccati_surrogate(p, alpha, 6000);
    auto law = make_feedback_law(p, vstar);
    const double t0 = 0.2;
    const Vec y0 = {0.35, -0.15, 0.3, 0.25};
    Vec py;
    matvec(vstar.p_at(t0), y0, py);
    const double value = 0.5 * dot(y0, py);
    const double e_coarse = std::abs(eval_V(law, t0, y0, 100) - value);
    const double e_fine = std::abs(eval_V(law, t0, y0, 200) - value);
    CHECK(e_coarse / e_fine > 3.0);
    CHECK(e_coarse / e_fine < 5.5);
}

TEST_CASE("cost-to-go hjb residual vanishes at the exact value function") {
    // y' = u with v* = tanh(T - t) y^2 / 2: the closed loop under v* is
    // optimal, so B^T(grad v* + p) collapses along its own trajectories
    ControlProblem p = testsup::scalar_problem(0.0, 1.0, 1.0, 1.0, 1e-12, 1.0,
                                               Scheme::ExplicitEuler, 400);
    p.g = [](const Vec&) { return 0.0; };
    p.grad_g = [](const Vec&, Vec& out) { out = {0.0}; };
    testsup::TanhSurrogate vstar{1.0};
    auto law = make_feedback_law(p, vstar);
    const std::vector<std::pair<double, Vec>> samples = {{0.0, {0.8}}, {0.3, {-1.1}}};
    const double at_opt = mean_cost_to_go_hjb_residual(law, samples, 400);

    testsup::QuadraticSurrogate zero{Matrix(1, 1), {}};
    auto law0 = make_feedback_law(p, zero);
    const double at_zero = mean_cost_to_go_hjb_residual(law0, samples, 400);
    CHECK(at_opt < 1e-4);
    CHECK(at_zero > 100.0 * at_opt);
}

TEST_CASE("initial-time derivative identity gap decays under refinement") {
    ControlProblem p = build_pendulum(1.0, 0.1, 400);
    Rng rng(55);
    testsup::QuadraticSurrogate v{Matrix(4, 4), {}};
    for (int i = 0; i < 4; ++i)
        for (int j = i; j < 4; ++j) v.P(i, j) = v.P(j, i) = rng.uniform(-0.2, 0.5);
    auto law = make_feedback_law(p, v);
    const Vec y0 = {0.2, -0.4, 0.3, 0.1};
    const double gap_coarse = t0_derivative_identity_gap(law, 0.3, y0, 400);
    const double gap_fine = t0_derivative_identity_gap(law, 0.3, y0, 1600);
    CHECK(gap_fine < 0.02);
    CHECK(gap_fine < gap_coarse);
}
