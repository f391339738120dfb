#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "polyfeed/linalg.hpp"

namespace polyfeed {

/// Exponents per state coordinate; length equals the state dimension.
using MultiIndex = std::vector<int>;

enum class IndexSetKind { TotalDegree, HyperbolicCross };

inline std::string to_string(IndexSetKind kind) {
    return kind == IndexSetKind::TotalDegree ? "total_degree" : "hyperbolic_cross";
}

inline IndexSetKind index_set_kind_from_string(const std::string& s) {
    if (s == "total_degree" || s == "total" || s == "tot") return IndexSetKind::TotalDegree;
    if (s == "hyperbolic_cross" || s == "hc") return IndexSetKind::HyperbolicCross;
    throw std::invalid_argument("unknown index set kind: " + s);
}

/// Ordered family of multi-indices. Canonical order is graded: ascending total
/// degree, lexicographically descending within a degree, so coefficient files
/// are stable across runs.
struct IndexSet {
    IndexSetKind kind = IndexSetKind::TotalDegree;
    int degree = 0;
    int dim = 0;
    std::vector<MultiIndex> indices;

    int size() const { return static_cast<int>(indices.size()); }
};

namespace detail {

inline bool canonical_index_less(const MultiIndex& a, const MultiIndex& b) {
    int da = 0, db = 0;
    for (int v : a) da += v;
    for (int v : b) db += v;
    if (da != db) return da < db;
    return a > b;  // lexicographically descending within a degree
}

inline void sort_canonical(std::vector<MultiIndex>& indices) {
    std::sort(indices.begin(), indices.end(), canonical_index_less);
}

inline void enumerate_total_degree_rec(int coord, int budget, MultiIndex& current,
                                       std::vector<MultiIndex>& out) {
    if (coord == static_cast<int>(current.size())) {
        out.push_back(current);
        return;
    }
    for (int e = 0; e <= budget; ++e) {
        current[coord] = e;
        enumerate_total_degree_rec(coord + 1, budget - e, current, out);
    }
    current[coord] = 0;
}

inline void enumerate_hyperbolic_rec(int coord, long long product, long long cap,
                                     MultiIndex& current, std::vector<MultiIndex>& out) {
    if (coord == static_cast<int>(current.size())) {
        out.push_back(current);
        return;
    }
    for (int e = 0; product * (e + 1) <= cap; ++e) {
        current[coord] = e;
        enumerate_hyperbolic_rec(coord + 1, product * (e + 1), cap, current, out);
    }
    current[coord] = 0;
}

}  // namespace detail

/// All alpha with sum(alpha) <= n; cardinality C(n+d, d).
inline IndexSet enumerate_total_degree(int d, int n) {
    if (d < 1 || n < 0) throw std::invalid_argument("enumerate_total_degree: need d >= 1, n >= 0");
    IndexSet set;
    set.kind = IndexSetKind::TotalDegree;
    set.degree = n;
    set.dim = d;
    MultiIndex current(d, 0);
    detail::enumerate_total_degree_rec(0, n, current, set.indices);
    detail::sort_canonical(set.indices);
    return set;
}

/// All alpha with prod(alpha_j + 1) <= n + 1.
inline IndexSet enumerate_hyperbolic_cross(int d, int n) {
    if (d < 1 || n < 0)
        throw std::invalid_argument("enumerate_hyperbolic_cross: need d >= 1, n >= 0");
    IndexSet set;
    set.kind = IndexSetKind::HyperbolicCross;
    set.degree = n;
    set.dim = d;
    MultiIndex current(d, 0);
    detail::enumerate_hyperbolic_rec(0, 1, n + 1, current, set.indices);
    detail::sort_canonical(set.indices);
    return set;
}

inline IndexSet enumerate_index_set(IndexSetKind kind, int d, int n) {
    return kind == IndexSetKind::TotalDegree ? enumerate_total_degree(d, n)
                                             : enumerate_hyperbolic_cross(d, n);
}

inline unsigned long long binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    k = std::min(k, n - k);
    unsigned long long r = 1;
    for (int i = 1; i <= k; ++i) r = r * static_cast<unsigned long long>(n - k + i) / i;
    return r;
}

/// Cardinality bound for the hyperbolic cross reported by basis-info
/// (min of 2 n^3 4^d and e^2 n^(2 + log2 d), in doubles to avoid overflow).
inline double hyperbolic_cross_bound(int d, int n) {
    if (n == 0) return 1.0;
    const double b1 = 2.0 * std::pow(static_cast<double>(n), 3.0) * std::pow(4.0, d);
    const double b2 =
        std::exp(2.0) * std::pow(static_cast<double>(n), 2.0 + std::log2(static_cast<double>(d)));
    return std::min(b1, b2);
}

enum class BFilterMode {
    AnyControlled,  ///< keep alpha if some coordinate with alpha_i > 0 is controlled (default)
    AllControlled   ///< keep alpha only if every coordinate with alpha_i > 0 is controlled
};

/// Drops basis elements whose gradient is annihilated by B^T. The zero
/// multi-index has a vanishing gradient and is always removed.
inline IndexSet filter_by_B(const IndexSet& set, const Matrix& B,
                            BFilterMode mode = BFilterMode::AnyControlled) {
    if (B.rows() != set.dim) throw std::invalid_argument("filter_by_B: B row count != dim");
    std::vector<bool> controlled(set.dim, false);
    for (int i = 0; i < B.rows(); ++i)
        for (int j = 0; j < B.cols(); ++j)
            if (B(i, j) != 0.0) controlled[i] = true;
    IndexSet out;
    out.kind = set.kind;
    out.degree = set.degree;
    out.dim = set.dim;
    for (const auto& alpha : set.indices) {
        bool any_positive = false;
        bool any_controlled = false;
        bool all_controlled = true;
        for (int i = 0; i < set.dim; ++i) {
            if (alpha[i] <= 0) continue;
            any_positive = true;
            if (controlled[i])
                any_controlled = true;
            else
                all_controlled = false;
        }
        if (!any_positive) continue;
        const bool keep =
            mode == BFilterMode::AnyControlled ? any_controlled : all_controlled;
        if (keep) out.indices.push_back(alpha);
    }
    return out;
}

/// Evaluation record for a value-function surrogate at one (t, y); also holds
/// reusable scratch so hot loops avoid per-node allocation. One instance per
/// thread, surrogates themselves stay immutable.
struct SurrogateEval {
    double value = 0.0;
    double dt = 0.0;
    Vec grad;
    Matrix hess;

    Vec scratch_pow;
    Vec scratch_c;
    Vec scratch_cdot;
};

/// Space-time polynomial surrogate
///   v(t, y) = sum_{j,i} theta(j, i) (t/T)^j prod_c (y_c / l)^{alpha_i(c)}.
class PolynomialAnsatz {
public:
    PolynomialAnsatz() = default;

    PolynomialAnsatz(int time_degree, IndexSet set, double space_scale, double horizon)
        : time_degree_(time_degree),
          set_(std::move(set)),
          theta_(time_degree, static_cast<int>(set_.indices.size())),
          space_scale_(space_scale),
          horizon_(horizon) {
        if (time_degree_ < 1) throw std::invalid_argument("ansatz: time degree must be >= 1");
        if (space_scale_ <= 0) throw std::invalid_argument("ansatz: space scale must be > 0");
        if (horizon_ <= 0) throw std::invalid_argument("ansatz: horizon must be > 0");
        build_supports();
    }

    int time_degree() const { return time_degree_; }
    const IndexSet& index_set() const { return set_; }
    int dim() const { return set_.dim; }
    int basis_size() const { return set_.size(); }
    int parameter_count() const { return time_degree_ * set_.size(); }
    double space_scale() const { return space_scale_; }
    double horizon() const { return horizon_; }

    Matrix& theta() { return theta_; }
    const Matrix& theta() const { return theta_; }

    void set_theta_flat(const Vec& flat) {
        if (static_cast<int>(flat.size()) != parameter_count())
            throw std::invalid_argument("set_theta_flat: size mismatch");
        theta_.data() = flat;
    }
    const Vec& theta_flat() const { return theta_.data(); }

    /// Value, spatial gradient, spatial Hessian and time derivative at (t, y).
    void eval_full(double t, const Vec& y, SurrogateEval& e) const {
        const int d = set_.dim;
        const int nb = set_.size();
        e.grad.assign(d, 0.0);
        if (e.hess.rows() != d) e.hess.resize(d, d);
        e.hess.set_zero();
        e.value = 0.0;
        e.dt = 0.0;
        if (nb == 0) return;
        collapse_time(t, e.scratch_c, e.scratch_cdot);
        fill_pow_table(y, e.scratch_pow);
        const double inv_l = 1.0 / space_scale_;
        const int stride = max_exponent_ + 1;
        for (int i = 0; i < nb; ++i) {
            const double ci = e.scratch_c[i];
            const double ci_dot = e.scratch_cdot[i];
            const auto& supp = supports_[i];
            // phi and per-support-entry "phi with one exponent dropped"
            double phi = 1.0;
            for (const auto& [c, p] : supp) phi *= e.scratch_pow[c * stride + p];
            e.value += ci * phi;
            e.dt += ci_dot * phi;
            if (ci == 0.0 || supp.empty()) continue;
            for (std::size_t a = 0; a < supp.size(); ++a) {
                const auto [ca, pa] = supp[a];
                double dphi = pa * inv_l;
                for (std::size_t b = 0; b < supp.size(); ++b) {
                    const auto [cb, pb] = supp[b];
                    dphi *= e.scratch_pow[cb * stride + (a == b ? pb - 1 : pb)];
                }
                e.grad[ca] += ci * dphi;
                // second derivatives touch only support coordinates
                for (std::size_t b = a; b < supp.size(); ++b) {
                    const auto [cb, pb] = supp[b];
                    double d2;
                    if (a == b) {
                        if (pa < 2) continue;
                        d2 = pa * (pa - 1) * inv_l * inv_l;
                        for (std::size_t c2 = 0; c2 < supp.size(); ++c2) {
                            const auto [cc, pc] = supp[c2];
                            d2 *= e.scratch_pow[cc * stride + (c2 == a ? pc - 2 : pc)];
                        }
                        e.hess(ca, ca) += ci * d2;
                    } else {
                        d2 = pa * pb * inv_l * inv_l;
                        for (std::size_t c2 = 0; c2 < supp.size(); ++c2) {
                            const auto [cc, pc] = supp[c2];
                            int drop = (c2 == a || c2 == b) ? 1 : 0;
                            d2 *= e.scratch_pow[cc * stride + pc - drop];
                        }
                        e.hess(ca, cb) += ci * d2;
                        e.hess(cb, ca) += ci * d2;
                    }
                }
            }
        }
    }

    /// g[i] = grad_y phi_i(y) . z for every basis index i (time factor excluded).
    void grad_dot_all(const Vec& y, const Vec& z, Vec& out, Vec& pow_scratch) const {
        const int nb = set_.size();
        out.assign(nb, 0.0);
        if (nb == 0) return;
        fill_pow_table(y, pow_scratch);
        const double inv_l = 1.0 / space_scale_;
        const int stride = max_exponent_ + 1;
        for (int i = 0; i < nb; ++i) {
            const auto& supp = supports_[i];
            double acc = 0.0;
            for (std::size_t a = 0; a < supp.size(); ++a) {
                const auto [ca, pa] = supp[a];
                const double za = z[ca];
                if (za == 0.0) continue;
                double dphi = pa * inv_l;
                for (std::size_t b = 0; b < supp.size(); ++b) {
                    const auto [cb, pb] = supp[b];
                    dphi *= pow_scratch[cb * stride + (a == b ? pb - 1 : pb)];
                }
                acc += dphi * za;
            }
            out[i] = acc;
        }
    }

    /// Powers (t/T)^j for j = 0..m-1.
    void time_powers(double t, Vec& tp) const {
        const double tau = t / horizon_;
        tp.resize(time_degree_);
        double p = 1.0;
        for (int j = 0; j < time_degree_; ++j) {
            tp[j] = p;
            p *= tau;
        }
    }

private:
    void build_supports() {
        supports_.clear();
        supports_.reserve(set_.indices.size());
        max_exponent_ = 0;
        for (const auto& alpha : set_.indices) {
            std::vector<std::pair<int, int>> supp;
            for (int c = 0; c < set_.dim; ++c)
                if (alpha[c] > 0) {
                    supp.emplace_back(c, alpha[c]);
                    max_exponent_ = std::max(max_exponent_, alpha[c]);
                }
            supports_.push_back(std::move(supp));
        }
    }

    void collapse_time(double t, Vec& c, Vec& cdot) const {
        const int nb = set_.size();
        const double tau = t / horizon_;
        c.assign(nb, 0.0);
        cdot.assign(nb, 0.0);
        double tp = 1.0;       // tau^j
        double tp_prev = 0.0;  // tau^(j-1)
        for (int j = 0; j < time_degree_; ++j) {
            const double* row = theta_.row(j);
            const double w_dot = j / horizon_ * tp_prev;
            for (int i = 0; i < nb; ++i) {
                c[i] += row[i] * tp;
                cdot[i] += row[i] * w_dot;
            }
            tp_prev = tp;
            tp *= tau;
        }
    }

    void fill_pow_table(const Vec& y, Vec& pow) const {
        const int d = set_.dim;
        const int stride = max_exponent_ + 1;
        pow.resize(static_cast<std::size_t>(d) * stride);
        const double inv_l = 1.0 / space_scale_;
        for (int c = 0; c < d; ++c) {
            const double yc = y[c] * inv_l;
            double p = 1.0;
            for (int k = 0; k <= max_exponent_; ++k) {
                pow[c * stride + k] = p;
                p *= yc;
            }
        }
    }

    int time_degree_ = 0;
    IndexSet set_;
    Matrix theta_;
    double space_scale_ = 1.0;
    double horizon_ = 1.0;
    std::vector<std::vector<std::pair<int, int>>> supports_;
    int max_exponent_ = 0;
};

/// Convenience: enumerate, filter by B, wrap in a zero-coefficient ansatz.
inline PolynomialAnsatz make_ansatz(IndexSetKind kind, int space_degree, int time_degree,
                                    const Matrix& B, double space_scale, double horizon,
                                    BFilterMode mode = BFilterMode::AnyControlled) {
    IndexSet full = enumerate_index_set(kind, B.rows(), space_degree);
    return PolynomialAnsatz(time_degree, filter_by_B(full, B, mode), space_scale, horizon);
}

inline nlohmann::json ansatz_to_json(const PolynomialAnsatz& a) {
    nlohmann::json j;
    j["time_degree"] = a.time_degree();
    j["kind"] = to_string(a.index_set().kind);
    j["degree"] = a.index_set().degree;
    j["space_scale"] = a.space_scale();
    j["horizon"] = a.horizon();
    nlohmann::json indices = nlohmann::json::array();
    for (const auto& alpha : a.index_set().indices) indices.push_back(alpha);
    j["indices"] = std::move(indices);
    nlohmann::json theta = nlohmann::json::array();
    for (int r = 0; r < a.theta().rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < a.theta().cols(); ++c) row.push_back(a.theta()(r, c));
        theta.push_back(std::move(row));
    }
    j["theta"] = std::move(theta);
    return j;
}

inline PolynomialAnsatz ansatz_from_json(const nlohmann::json& j) {
    IndexSet set;
    set.kind = index_set_kind_from_string(j.at("kind").get<std::string>());
    set.degree = j.at("degree").get<int>();
    for (const auto& row : j.at("indices")) set.indices.push_back(row.get<MultiIndex>());
    set.dim = set.indices.empty() ? 0 : static_cast<int>(set.indices.front().size());
    PolynomialAnsatz a(j.at("time_degree").get<int>(), std::move(set),
                       j.at("space_scale").get<double>(), j.at("horizon").get<double>());
    const auto& theta = j.at("theta");
    if (static_cast<int>(theta.size()) != a.time_degree())
        throw std::invalid_argument("ansatz_from_json: theta row count mismatch");
    for (int r = 0; r < a.time_degree(); ++r) {
        const auto& row = theta.at(r);
        if (static_cast<int>(row.size()) != a.basis_size())
            throw std::invalid_argument("ansatz_from_json: theta column count mismatch");
        for (int c = 0; c < a.basis_size(); ++c) {
            const double v = row.at(c).get<double>();
            if (!std::isfinite(v)) throw std::invalid_argument("ansatz_from_json: non-finite theta");
            a.theta()(r, c) = v;
        }
    }
    return a;
}

}  // namespace polyfeed
