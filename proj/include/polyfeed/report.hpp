#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "polyfeed/integrate.hpp"

namespace polyfeed {

namespace detail {

/// Trapezoid integral of |a_k - b_k|^2 over the grid (b omitted: |a_k|^2).
inline double trapezoid_sq(const TimeGrid& grid, const std::vector<Vec>& a,
                           const std::vector<Vec>* b) {
    const double h = grid.h();
    double acc = 0.0;
    for (int k = 0; k <= grid.steps; ++k) {
        double sq = 0.0;
        for (std::size_t m = 0; m < a[k].size(); ++m) {
            const double diff = b ? a[k][m] - (*b)[k][m] : a[k][m];
            sq += diff * diff;
        }
        acc += ((k == 0 || k == grid.steps) ? 0.5 * h : h) * sq;
    }
    return acc;
}

}  // namespace detail

/// One compared rollout pair living on a shared grid.
struct SeriesPair {
    const TimeGrid* grid = nullptr;
    const std::vector<Vec>* reference = nullptr;
    const std::vector<Vec>* candidate = nullptr;
};

/// Mean normalized squared error: sum of integrated squared deviations over
/// the sum of integrated squared reference norms (trapezoid quadrature).
inline double mnse(const std::vector<SeriesPair>& pairs) {
    double num = 0.0, den = 0.0;
    for (const auto& pair : pairs) {
        if (pair.reference->size() != pair.candidate->size())
            throw std::invalid_argument("mnse: grids do not align");
        num += detail::trapezoid_sq(*pair.grid, *pair.candidate, pair.reference);
        den += detail::trapezoid_sq(*pair.grid, *pair.reference, nullptr);
    }
    if (den <= 0.0) {
        if (num == 0.0) return 0.0;  // identical all-zero series
        throw std::runtime_error("mnse: degenerate reference");
    }
    return num / den;
}

/// Mean normalized absolute cost error sum|J* - J^| / sum J*. The all-zero
/// case (costless reference reproduced exactly) evaluates to 0.
inline double mnae_j(const std::vector<std::pair<double, double>>& costs) {
    double num = 0.0, den = 0.0;
    for (const auto& [j_ref, j_hat] : costs) {
        num += std::abs(j_ref - j_hat);
        den += j_ref;
    }
    if (den <= 0.0) {
        if (num == 0.0) return 0.0;
        throw std::runtime_error("mnae_j: reference costs sum to zero");
    }
    return num / den;
}

/// Entries with |theta_i| > threshold; the proximal step produces exact zeros,
/// so the default threshold is exactly 0.
inline std::pair<int, double> support_cardinality(const Vec& theta, double threshold = 0.0) {
    int count = 0;
    for (double v : theta)
        if (std::abs(v) > threshold) ++count;
    const double pct = theta.empty() ? 0.0 : 100.0 * count / static_cast<double>(theta.size());
    return {count, pct};
}

/// Aggregated comparison of a feedback law against open-loop references.
struct EvaluationResult {
    std::vector<double> j_reference;
    std::vector<double> j_feedback;
    double mnse_u = 0.0;
    double mnse_y = 0.0;
    double mnae = 0.0;
    int support_count = 0;
    double support_pct = 0.0;
    int reference_failures = 0;  ///< reference solves that hit the iteration cap
};

}  // namespace polyfeed
