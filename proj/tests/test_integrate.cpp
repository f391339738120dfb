#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "test_support.hpp"

using namespace polyfeed;
using testsup::QuadraticSurrogate;

TEST_CASE("euler: uncontrolled trivial cases") {
    // f = 0 and an inert control column: the state never moves
    ControlProblem p = testsup::scalar_problem(0.0, 0.0, 1.0, 1.0, 1.0, 1.0,
                                               Scheme::ExplicitEuler, 10);
    QuadraticSurrogate v{Matrix(1, 1), {}};
    v.P(0, 0) = 0.4;
    auto law = make_feedback_law(p, v);
    Trajectory traj = euler_rollout(law, TimeGrid(0, 1, 10), {0.8});
    for (const auto& y : traj.states) CHECK(y[0] == 0.8);

    // one hand-checked step of y' = -y
    ControlProblem decay = testsup::scalar_problem(-1.0, 0.0, 1.0, 0.0, 0.0, 0.1,
                                                   Scheme::ExplicitEuler, 1);
    QuadraticSurrogate zero{Matrix(1, 1), {}};
    auto law_decay = make_feedback_law(decay, zero);
    Trajectory one = euler_rollout(law_decay, TimeGrid(0, 0.1, 1), {1.0});
    CHECK(one.states[1][0] == doctest::Approx(0.9));
}

TEST_CASE("euler converges to the exponential") {
    ControlProblem decay = testsup::scalar_problem(-1.0, 0.0, 1.0, 0.0, 0.0, 1.0,
                                                   Scheme::ExplicitEuler, 1000);
    QuadraticSurrogate zero{Matrix(1, 1), {}};
    auto law = make_feedback_law(decay, zero);
    Trajectory traj = euler_rollout(law, TimeGrid(0, 1, 1000), {1.0});
    CHECK(std::abs(traj.states[1000][0] - std::exp(-1.0)) < 2e-4);
}

TEST_CASE("crank-nicolson: closed form on a linear step, trivial Newton counts") {
    const double lambda = -2.3, h = 0.05;
    ControlProblem p = testsup::scalar_problem(lambda, 0.0, 1.0, 0.0, 0.0, h,
                                               Scheme::CrankNicolson, 1);
    QuadraticSurrogate zero{Matrix(1, 1), {}};
    auto law = make_feedback_law(p, zero);
    Trajectory traj = crank_nicolson_rollout(law, TimeGrid(0, h, 1), {1.0});
    CHECK(traj.states[1][0] ==
          doctest::Approx((1 + 0.5 * h * lambda) / (1 - 0.5 * h * lambda)).epsilon(1e-12));

    ControlProblem frozen = testsup::scalar_problem(0.0, 0.0, 1.0, 1.0, 1.0, 1.0,
                                                    Scheme::CrankNicolson, 8);
    auto law_frozen = make_feedback_law(frozen, zero);
    Trajectory constant = crank_nicolson_rollout(law_frozen, TimeGrid(0, 1, 8), {0.5});
    for (const auto& y : constant.states) CHECK(y[0] == 0.5);
    CHECK(constant.max_newton_iters <= 1);
}

TEST_CASE("stiff decay: CN stays bounded where explicit euler blows up") {
    ControlProblem stiff = testsup::scalar_problem(-50.0, 0.0, 1.0, 0.0, 0.0, 1.0,
                                                   Scheme::CrankNicolson, 10);
    QuadraticSurrogate zero{Matrix(1, 1), {}};
    auto law = make_feedback_law(stiff, zero);
    Trajectory cn = crank_nicolson_rollout(law, TimeGrid(0, 1, 10), {1.0});
    CHECK(!cn.diverged);
    for (const auto& y : cn.states) CHECK(std::abs(y[0]) <= 1.0);

    ControlProblem stiff_euler = testsup::scalar_problem(-50.0, 0.0, 1.0, 0.0, 0.0, 1.0,
                                                         Scheme::ExplicitEuler, 10);
    stiff_euler.R_max = 1e3;
    auto law_e = make_feedback_law(stiff_euler, zero);
    Trajectory euler = euler_rollout(law_e, TimeGrid(0, 1, 10), {1.0});
    CHECK(euler.diverged);
    CHECK(!std::isfinite(euler.total_cost()));
}

TEST_CASE("open-loop rollout with zero controls reproduces the uncontrolled path") {
    ControlProblem p = testsup::random_2d_problem(3, Scheme::ExplicitEuler, 40);
    QuadraticSurrogate zero{Matrix(2, 2), {}};
    auto law = make_feedback_law(p, zero);
    const TimeGrid grid(0.2, 1.0, 40);
    const Vec y0 = {0.4, -0.1};
    Trajectory closed = euler_rollout(law, grid, y0);
    Trajectory open = rollout_open_loop(p, grid, y0, std::vector<Vec>(grid.nodes(), Vec{0.0}));
    for (int k = 0; k <= 40; ++k) CHECK(open.states[k] == closed.states[k]);
    CHECK(open.total_cost() == closed.total_cost());

    ControlProblem pc = testsup::random_2d_problem(3, Scheme::CrankNicolson, 40);
    Trajectory open_cn =
        rollout_open_loop(pc, grid, y0, std::vector<Vec>(grid.nodes(), Vec{0.0}));
    auto law_cn = make_feedback_law(pc, zero);
    Trajectory closed_cn = crank_nicolson_rollout(law_cn, grid, y0);
    for (int k = 0; k <= 40; ++k)
        CHECK(open_cn.states[k][0] == doctest::Approx(closed_cn.states[k][0]).epsilon(1e-12));
}

TEST_CASE("grid refinement halves the euler cost error") {
    ControlProblem p = testsup::scalar_problem(-0.8, 0.0, 1.0, 1.0, 1.0, 1.0,
                                               Scheme::ExplicitEuler, 1);
    QuadraticSurrogate zero{Matrix(1, 1), {}};
    auto law = make_feedback_law(p, zero);
    const Vec y0 = {1.0};
    auto cost_at = [&](int n) { return euler_rollout(law, TimeGrid(0, 1, n), y0).total_cost(); };
    const double ref = cost_at(6400);
    const double e1 = std::abs(cost_at(100) - ref);
    const double e2 = std::abs(cost_at(200) - ref);
    CHECK(e1 / e2 > 1.6);
    CHECK(e1 / e2 < 2.4);
}

TEST_CASE("rollouts are deterministic and costs nonnegative") {
    ControlProblem p = testsup::random_2d_problem(51, Scheme::CrankNicolson, 30);
    Rng rng(4);
    QuadraticSurrogate v{Matrix(2, 2), {}};
    v.P(0, 0) = 0.5;
    v.P(1, 1) = 0.5;
    auto law = make_feedback_law(p, v);
    for (int trial = 0; trial < 5; ++trial) {
        const Vec y0 = rng.uniform_vec(2, -1, 1);
        Trajectory a = crank_nicolson_rollout(law, TimeGrid(0.1, 1.0, 30), y0);
        Trajectory b = crank_nicolson_rollout(law, TimeGrid(0.1, 1.0, 30), y0);
        REQUIRE(!a.diverged);
        CHECK(a.total_cost() >= 0.0);
        for (int k = 0; k <= 30; ++k) CHECK(a.states[k] == b.states[k]);
    }
}

TEST_CASE("trajectory csv export carries the expected header") {
    ControlProblem p = testsup::random_2d_problem(3, Scheme::ExplicitEuler, 4);
    QuadraticSurrogate zero{Matrix(2, 2), {}};
    auto law = make_feedback_law(p, zero);
    Trajectory traj = euler_rollout(law, TimeGrid(0, 1, 4), {0.1, 0.2});
    std::ostringstream os;
    write_trajectory_csv(os, traj);
    const std::string text = os.str();
    CHECK(text.rfind("t,y_1,y_2,u_1\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 6);
}
