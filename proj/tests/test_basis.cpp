#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "polyfeed/basis.hpp"
#include "polyfeed/rng.hpp"

using namespace polyfeed;

namespace {

/// Brute-force reference: every alpha in the box {0..n}^d passing the predicate.
template <class Pred>
std::vector<MultiIndex> box_enumerate(int d, int n, Pred keep) {
    std::vector<MultiIndex> out;
    MultiIndex alpha(d, 0);
    for (;;) {
        if (keep(alpha)) out.push_back(alpha);
        int c = 0;
        while (c < d) {
            if (++alpha[c] <= n) break;
            alpha[c] = 0;
            ++c;
        }
        if (c == d) break;
    }
    return out;
}

std::set<MultiIndex> as_set(const std::vector<MultiIndex>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("total degree enumeration matches brute force and binomial count") {
    CHECK(enumerate_total_degree(2, 0).indices == std::vector<MultiIndex>{{0, 0}});

    const IndexSet s22 = enumerate_total_degree(2, 2);
    const std::vector<MultiIndex> expected = {{0, 0}, {1, 0}, {0, 1}, {2, 0}, {1, 1}, {0, 2}};
    CHECK(s22.indices == expected);

    CHECK(enumerate_total_degree(4, 2).size() == 15);

    for (int d = 1; d <= 6; ++d)
        for (int n = 0; n <= 6; ++n) {
            const IndexSet s = enumerate_total_degree(d, n);
            auto ref = box_enumerate(d, n, [&](const MultiIndex& a) {
                int sum = 0;
                for (int v : a) sum += v;
                return sum <= n;
            });
            CHECK(static_cast<unsigned long long>(s.size()) == binomial(n + d, d));
            CHECK(as_set(s.indices) == as_set(ref));
        }
}

TEST_CASE("hyperbolic cross enumeration") {
    const IndexSet s = enumerate_hyperbolic_cross(2, 3);
    const std::set<MultiIndex> expected = {{0, 0}, {1, 0}, {2, 0}, {3, 0},
                                           {0, 1}, {1, 1}, {0, 2}, {0, 3}};
    CHECK(as_set(s.indices) == expected);
    CHECK(s.size() == 8);

    CHECK(enumerate_hyperbolic_cross(39, 2).size() == 79);
    CHECK(enumerate_hyperbolic_cross(1, 0).indices == std::vector<MultiIndex>{{0}});

    // containment in the total-degree set of the same order
    for (int d = 1; d <= 4; ++d)
        for (int n = 0; n <= 8; ++n) {
            const auto hc = as_set(enumerate_hyperbolic_cross(d, n).indices);
            const auto td = as_set(enumerate_total_degree(d, n).indices);
            CHECK(std::includes(td.begin(), td.end(), hc.begin(), hc.end()));
        }
}

TEST_CASE("enumeration is idempotent and deterministically ordered") {
    const IndexSet a = enumerate_hyperbolic_cross(4, 5);
    const IndexSet b = enumerate_hyperbolic_cross(4, 5);
    CHECK(a.indices == b.indices);
    for (int i = 1; i < a.size(); ++i)
        CHECK(detail::canonical_index_less(a.indices[i - 1], a.indices[i]));
}

TEST_CASE("B filter keeps exactly the monomials with a controlled coordinate") {
    Matrix b_col(4, 1);
    b_col(1, 0) = 1.0;
    const IndexSet filtered = filter_by_B(enumerate_total_degree(4, 2), b_col);
    const std::set<MultiIndex> expected = {
        {0, 1, 0, 0}, {0, 2, 0, 0}, {1, 1, 0, 0}, {0, 1, 1, 0}, {0, 1, 0, 1}};
    CHECK(as_set(filtered.indices) == expected);
    CHECK(filtered.size() == 5);

    // 13 controlled coordinates out of 39, second-order hyperbolic cross
    Matrix b39(39, 3);
    for (int i = 0; i < 13; ++i) b39(3 * i, i % 3) = 1.0;
    CHECK(filter_by_B(enumerate_hyperbolic_cross(39, 2), b39).size() == 26);
    CHECK(filter_by_B(enumerate_hyperbolic_cross(39, 4), b39).size() == 468);

    CHECK(filter_by_B(enumerate_hyperbolic_cross(20, 4), Matrix::identity(20)).size() == 270);
    CHECK(filter_by_B(enumerate_hyperbolic_cross(20, 2), Matrix::identity(20)).size() == 40);

    // all-zero B leaves nothing controllable
    CHECK(filter_by_B(enumerate_total_degree(3, 2), Matrix(3, 2)).size() == 0);
}

TEST_CASE("B filter subset and symbolic removal characterization") {
    Matrix B(3, 2);
    B(0, 0) = 2.0;
    B(2, 1) = -1.0;  // coordinates 0 and 2 controlled
    const IndexSet full = enumerate_total_degree(3, 3);
    const IndexSet kept = filter_by_B(full, B);
    const auto kept_set = as_set(kept.indices);
    for (const auto& alpha : kept.indices)
        CHECK(as_set(full.indices).count(alpha) == 1);
    for (const auto& alpha : full.indices) {
        const bool has_controlled = alpha[0] > 0 || alpha[2] > 0;
        CHECK(kept_set.count(alpha) == static_cast<std::size_t>(has_controlled ? 1 : 0));
    }

    // the literal all-controlled variant keeps only monomials fully inside {0, 2}
    const IndexSet strict = filter_by_B(full, B, BFilterMode::AllControlled);
    for (const auto& alpha : strict.indices) CHECK(alpha[1] == 0);
    CHECK(strict.size() < kept.size());
}

TEST_CASE("ansatz evaluation: hand monomial and zero coefficients") {
    IndexSet set = enumerate_total_degree(2, 2);
    PolynomialAnsatz a(1, set, 1.0, 1.0);
    for (int i = 0; i < a.basis_size(); ++i)
        if (set.indices[i] == MultiIndex{2, 0}) a.theta()(0, i) = 1.0;
    SurrogateEval e;
    a.eval_full(0.3, {3.0, 5.0}, e);
    CHECK(e.value == doctest::Approx(9.0));
    CHECK(e.grad[0] == doctest::Approx(6.0));
    CHECK(e.grad[1] == doctest::Approx(0.0));
    CHECK(e.hess(0, 0) == doctest::Approx(2.0));
    CHECK(e.hess(0, 1) == doctest::Approx(0.0));
    CHECK(e.hess(1, 1) == doctest::Approx(0.0));
    CHECK(e.dt == doctest::Approx(0.0));

    PolynomialAnsatz zero(3, set, 2.0, 1.5);
    zero.eval_full(0.7, {0.4, -1.2}, e);
    CHECK(e.value == 0.0);
    CHECK(norm_inf(e.grad) == 0.0);
    CHECK(norm_inf(e.hess.data()) == 0.0);
    CHECK(e.dt == 0.0);
}

TEST_CASE("ansatz derivatives agree with central finite differences") {
    Rng rng(123);
    const double l = 0.7, T = 2.0;
    PolynomialAnsatz a(3, enumerate_hyperbolic_cross(3, 3), l, T);
    const double hy = 1e-5 * l, ht = 1e-5 * T;
    SurrogateEval e, ep, em;
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        for (auto& th : a.theta().data()) th = rng.uniform(-1, 1);
        const double t = rng.uniform(0, T);
        Vec y = rng.uniform_vec(3, -1.4, 1.4);
        a.eval_full(t, y, e);

        a.eval_full(t + ht, y, ep);
        a.eval_full(t - ht, y, em);
        CHECK(std::abs((ep.value - em.value) / (2 * ht) - e.dt) <=
              1e-6 * std::max(1.0, std::abs(e.dt)));

        for (int c = 0; c < 3; ++c) {
            Vec yp = y, ym = y;
            yp[c] += hy;
            ym[c] -= hy;
            a.eval_full(t, yp, ep);
            a.eval_full(t, ym, em);
            const double fd_grad = (ep.value - em.value) / (2 * hy);
            CHECK(std::abs(fd_grad - e.grad[c]) <= 1e-6 * std::max(1.0, std::abs(e.grad[c])));
            for (int c2 = 0; c2 < 3; ++c2) {
                const double fd_h = (ep.grad[c2] - em.grad[c2]) / (2 * hy);
                CHECK(std::abs(fd_h - e.hess(c2, c)) <=
                      1e-6 * std::max(1.0, std::abs(e.hess(c2, c))));
                ++checked;
            }
        }
        // symmetry
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) CHECK(e.hess(r, c) == e.hess(c, r));
    }
    CHECK(checked > 0);
}

TEST_CASE("coefficient persistence round-trips bit-exactly") {
    Rng rng(99);
    Matrix B(4, 1);
    B(1, 0) = 1.0;
    PolynomialAnsatz a = make_ansatz(IndexSetKind::TotalDegree, 2, 5, B, 0.5, 1.0);
    for (auto& th : a.theta().data()) th = rng.normal() * std::pow(10.0, rng.uniform(-12, 3));
    a.theta()(0, 0) = 1.0 / 3.0;
    a.theta()(1, 0) = -0.1;
    const nlohmann::json j = ansatz_to_json(a);
    const std::string text = j.dump();
    const PolynomialAnsatz b = ansatz_from_json(nlohmann::json::parse(text));
    REQUIRE(b.parameter_count() == a.parameter_count());
    CHECK(b.index_set().indices == a.index_set().indices);
    CHECK(b.space_scale() == a.space_scale());
    CHECK(b.horizon() == a.horizon());
    for (int i = 0; i < a.parameter_count(); ++i) CHECK(b.theta_flat()[i] == a.theta_flat()[i]);
}
