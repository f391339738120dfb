#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace polyfeed {

using Vec = std::vector<double>;

/// Dense row-major matrix, sized for control problems (d <= a few dozen).
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
    double operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * cols_ + j]; }

    double* row(int i) { return data_.data() + static_cast<std::size_t>(i) * cols_; }
    const double* row(int i) const { return data_.data() + static_cast<std::size_t>(i) * cols_; }

    Vec& data() { return data_; }
    const Vec& data() const { return data_; }

    void resize(int rows, int cols) {
        rows_ = rows;
        cols_ = cols;
        data_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    }
    void set_zero() { data_.assign(data_.size(), 0.0); }

    Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (int i = 0; i < rows_; ++i)
            for (int j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    Vec data_;
};

inline void matvec(const Matrix& a, const Vec& x, Vec& y) {
    assert(static_cast<int>(x.size()) == a.cols());
    y.assign(a.rows(), 0.0);
    for (int i = 0; i < a.rows(); ++i) {
        const double* r = a.row(i);
        double s = 0.0;
        for (int j = 0; j < a.cols(); ++j) s += r[j] * x[j];
        y[i] = s;
    }
}

inline void matvec_transposed(const Matrix& a, const Vec& x, Vec& y) {
    assert(static_cast<int>(x.size()) == a.rows());
    y.assign(a.cols(), 0.0);
    for (int i = 0; i < a.rows(); ++i) {
        const double* r = a.row(i);
        const double xi = x[i];
        for (int j = 0; j < a.cols(); ++j) y[j] += r[j] * xi;
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    assert(a.cols() == b.rows());
    Matrix c(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        double* ci = c.row(i);
        for (int k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* bk = b.row(k);
            for (int j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

inline void axpy(double alpha, const Vec& x, Vec& y) {
    assert(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double dot(const Vec& a, const Vec& b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double norm_inf(const Vec& a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

inline bool all_finite(const Vec& a) {
    for (double v : a)
        if (!std::isfinite(v)) return false;
    return true;
}

inline Vec scaled(const Vec& a, double s) {
    Vec r(a);
    for (double& v : r) v *= s;
    return r;
}

/// LU factorization with partial pivoting; solves for the factored matrix and
/// its transpose without refactoring.
class LuFactorization {
public:
    LuFactorization() = default;
    explicit LuFactorization(Matrix a) { factor(std::move(a)); }

    void factor(Matrix a) {
        assert(a.rows() == a.cols());
        lu_ = std::move(a);
        const int n = lu_.rows();
        piv_.resize(n);
        singular_ = false;
        for (int k = 0; k < n; ++k) {
            int p = k;
            double best = std::abs(lu_(k, k));
            for (int i = k + 1; i < n; ++i) {
                const double v = std::abs(lu_(i, k));
                if (v > best) {
                    best = v;
                    p = i;
                }
            }
            piv_[k] = p;
            if (p != k)
                for (int j = 0; j < n; ++j) std::swap(lu_(k, j), lu_(p, j));
            const double pivot = lu_(k, k);
            if (pivot == 0.0 || !std::isfinite(pivot)) {
                singular_ = true;
                return;
            }
            for (int i = k + 1; i < n; ++i) {
                const double m = lu_(i, k) / pivot;
                lu_(i, k) = m;
                if (m == 0.0) continue;
                const double* rk = lu_.row(k);
                double* ri = lu_.row(i);
                for (int j = k + 1; j < n; ++j) ri[j] -= m * rk[j];
            }
        }
    }

    bool singular() const { return singular_; }

    // Solves A x = b in place.
    void solve(Vec& b) const {
        const int n = lu_.rows();
        assert(static_cast<int>(b.size()) == n && !singular_);
        for (int k = 0; k < n; ++k) {
            if (piv_[k] != k) std::swap(b[k], b[piv_[k]]);
            for (int i = k + 1; i < n; ++i) b[i] -= lu_(i, k) * b[k];
        }
        for (int i = n - 1; i >= 0; --i) {
            const double* ri = lu_.row(i);
            double s = b[i];
            for (int j = i + 1; j < n; ++j) s -= ri[j] * b[j];
            b[i] = s / ri[i];
        }
    }

    // Solves A^T x = b in place.
    void solve_transposed(Vec& b) const {
        const int n = lu_.rows();
        assert(static_cast<int>(b.size()) == n && !singular_);
        // U^T y = b (forward), then L^T z = y (backward), then undo pivoting.
        for (int i = 0; i < n; ++i) {
            double s = b[i];
            for (int j = 0; j < i; ++j) s -= lu_(j, i) * b[j];
            b[i] = s / lu_(i, i);
        }
        for (int i = n - 1; i >= 0; --i) {
            double s = b[i];
            for (int j = i + 1; j < n; ++j) s -= lu_(j, i) * b[j];
            b[i] = s;
        }
        for (int k = n - 1; k >= 0; --k)
            if (piv_[k] != k) std::swap(b[k], b[piv_[k]]);
    }

    double abs_det() const {
        double d = 1.0;
        for (int i = 0; i < lu_.rows(); ++i) d *= std::abs(lu_(i, i));
        return d;
    }

private:
    Matrix lu_;
    std::vector<int> piv_;
    bool singular_ = true;
};

inline Vec solve_linear(Matrix a, Vec b) {
    LuFactorization lu(std::move(a));
    if (lu.singular()) throw std::runtime_error("solve_linear: singular matrix");
    lu.solve(b);
    return b;
}

/// Least squares via Householder QR, for tall systems (used by test utilities
/// and the Riccati coefficient fit; m >= n required).
inline Vec least_squares(Matrix a, Vec b) {
    const int m = a.rows(), n = a.cols();
    if (m < n) throw std::invalid_argument("least_squares: underdetermined system");
    std::vector<double> beta(n);
    for (int k = 0; k < n; ++k) {
        double sigma = 0.0;
        for (int i = k; i < m; ++i) sigma += a(i, k) * a(i, k);
        double alpha = std::sqrt(sigma);
        if (a(k, k) > 0) alpha = -alpha;
        if (alpha == 0.0) throw std::runtime_error("least_squares: rank deficient");
        const double v0 = a(k, k) - alpha;
        a(k, k) = alpha;
        // Householder vector is (v0, a(k+1..m-1,k)); apply to trailing columns and b.
        const double denom = -v0 * alpha;  // = |v|^2 / 2 ... classic stable form
        beta[k] = denom;
        for (int j = k + 1; j < n; ++j) {
            double s = v0 * a(k, j);
            for (int i = k + 1; i < m; ++i) s += a(i, k) * a(i, j);
            s /= denom;
            a(k, j) -= s * v0;
            for (int i = k + 1; i < m; ++i) a(i, j) -= s * a(i, k);
        }
        double s = v0 * b[k];
        for (int i = k + 1; i < m; ++i) s += a(i, k) * b[i];
        s /= denom;
        b[k] -= s * v0;
        for (int i = k + 1; i < m; ++i) b[i] -= s * a(i, k);
    }
    Vec x(n);
    for (int i = n - 1; i >= 0; --i) {
        double s = b[i];
        for (int j = i + 1; j < n; ++j) s -= a(i, j) * x[j];
        x[i] = s / a(i, i);
    }
    return x;
}

/// Spectral norm by power iteration on A^T A (small matrices, test helper).
inline double spectral_norm(const Matrix& a, int iters = 200) {
    if (a.rows() == 0 || a.cols() == 0) return 0.0;
    Vec x(a.cols(), 1.0), y;
    double lambda = 0.0;
    for (int it = 0; it < iters; ++it) {
        matvec(a, x, y);
        Vec z;
        matvec_transposed(a, y, z);
        const double nz = norm2(z);
        if (nz == 0.0) return 0.0;
        for (auto& v : z) v /= nz;
        x = z;
        lambda = nz;
    }
    return std::sqrt(lambda);
}

}  // namespace polyfeed
