#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "polyfeed/linalg.hpp"

namespace polyfeed {

/// Chebyshev extreme points x_j = cos(j pi / N), j = 0..N (x_0 = 1, x_N = -1).
inline Vec chebyshev_nodes(int N) {
    Vec x(N + 1);
    for (int j = 0; j <= N; ++j) x[j] = std::cos(j * M_PI / N);
    return x;
}

/// First-derivative collocation matrix on the Chebyshev points, diagonal by
/// the negative-sum trick.
inline Matrix chebyshev_diff_matrix(int N) {
    const Vec x = chebyshev_nodes(N);
    Matrix D(N + 1, N + 1);
    auto c = [&](int i) { return (i == 0 || i == N) ? 2.0 : 1.0; };
    for (int i = 0; i <= N; ++i) {
        double row_sum = 0.0;
        for (int j = 0; j <= N; ++j) {
            if (i == j) continue;
            const double sign = ((i + j) % 2 == 0) ? 1.0 : -1.0;
            D(i, j) = c(i) / c(j) * sign / (x[i] - x[j]);
            row_sum += D(i, j);
        }
        D(i, i) = -row_sum;
    }
    return D;
}

/// Clenshaw-Curtis weights for integrating over [-1, 1] at the N+1 Chebyshev
/// points; sums to 2.
inline Vec clenshaw_curtis_weights(int N) {
    Vec w(N + 1, 0.0);
    if (N == 1) {
        w[0] = w[1] = 1.0;
        return w;
    }
    std::vector<double> theta(N + 1);
    for (int j = 0; j <= N; ++j) theta[j] = j * M_PI / N;
    std::vector<double> v(N - 1, 1.0);
    if (N % 2 == 0) {
        w[0] = w[N] = 1.0 / (N * N - 1.0);
        for (int k = 1; k <= N / 2 - 1; ++k)
            for (int i = 1; i <= N - 1; ++i)
                v[i - 1] -= 2.0 * std::cos(2.0 * k * theta[i]) / (4.0 * k * k - 1.0);
        for (int i = 1; i <= N - 1; ++i) v[i - 1] -= std::cos(N * theta[i]) / (N * N - 1.0);
    } else {
        w[0] = w[N] = 1.0 / (N * N);
        for (int k = 1; k <= (N - 1) / 2; ++k)
            for (int i = 1; i <= N - 1; ++i)
                v[i - 1] -= 2.0 * std::cos(2.0 * k * theta[i]) / (4.0 * k * k - 1.0);
    }
    for (int i = 1; i <= N - 1; ++i) w[i] = 2.0 * v[i - 1] / N;
    return w;
}

/// Second-derivative operator and quadrature on the interior points after the
/// homogeneous Neumann rows eliminate the boundary values: the two derivative
/// rows are solved for y(1), y(-1), giving y_b = R y_int, and the boundary
/// columns of D^2 (and the boundary weights) are folded through R.
struct NeumannReduced {
    int N = 0;               ///< polynomial grid order (N+1 points)
    Vec interior_nodes;      ///< x_1..x_{N-1}
    Matrix laplacian;        ///< (N-1) x (N-1)
    Vec weights;             ///< reduced Clenshaw-Curtis weights, sums to 2
    Matrix boundary_map;     ///< 2 x (N-1): rows give y(1) and y(-1)
    Matrix diff2_interior;   ///< raw D^2 interior block (diagnostics)
};

inline NeumannReduced build_neumann_reduced(int N) {
    if (N < 3) throw std::invalid_argument("build_neumann_reduced: N too small");
    NeumannReduced red;
    red.N = N;
    const Vec x = chebyshev_nodes(N);
    const Matrix D = chebyshev_diff_matrix(N);
    const Matrix D2 = matmul(D, D);
    const Vec w = clenshaw_curtis_weights(N);
    const int ni = N - 1;
    red.interior_nodes.assign(x.begin() + 1, x.end() - 1);

    const double m00 = D(0, 0), m01 = D(0, N), m10 = D(N, 0), m11 = D(N, N);
    const double det = m00 * m11 - m01 * m10;
    if (std::abs(det) < 1e-14 * (std::abs(m00 * m11) + std::abs(m01 * m10)))
        throw std::runtime_error("build_neumann_reduced: singular boundary elimination");
    red.boundary_map.resize(2, ni);
    for (int j = 0; j < ni; ++j) {
        const double b0 = -D(0, j + 1);
        const double b1 = -D(N, j + 1);
        red.boundary_map(0, j) = (m11 * b0 - m01 * b1) / det;
        red.boundary_map(1, j) = (-m10 * b0 + m00 * b1) / det;
    }

    red.laplacian.resize(ni, ni);
    red.diff2_interior.resize(ni, ni);
    for (int r = 0; r < ni; ++r)
        for (int c = 0; c < ni; ++c) {
            red.diff2_interior(r, c) = D2(r + 1, c + 1);
            red.laplacian(r, c) = D2(r + 1, c + 1) + D2(r + 1, 0) * red.boundary_map(0, c) +
                                  D2(r + 1, N) * red.boundary_map(1, c);
        }

    red.weights.resize(ni);
    for (int j = 0; j < ni; ++j)
        red.weights[j] = w[j + 1] + w[0] * red.boundary_map(0, j) + w[N] * red.boundary_map(1, j);
    return red;
}

}  // namespace polyfeed
