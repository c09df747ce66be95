#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "s2vgd/errors.hpp"

namespace s2vgd {

// Dense column-major matrix. Small sizes only (a few hundred rows at most),
// so everything here is plain loops.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data; // column-major, length rows*cols

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    double& operator()(int i, int j) { return data[static_cast<std::size_t>(j) * rows + i]; }
    double operator()(int i, int j) const {
        return data[static_cast<std::size_t>(j) * rows + i];
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

inline Matrix multiply(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw DimensionError("multiply: inner dimensions differ");
    Matrix c(a.rows, b.cols);
    for (int j = 0; j < b.cols; ++j)
        for (int k = 0; k < a.cols; ++k) {
            const double bkj = b(k, j);
            for (int i = 0; i < a.rows; ++i) c(i, j) += a(i, k) * bkj;
        }
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (int j = 0; j < a.cols; ++j)
        for (int i = 0; i < a.rows; ++i) t(j, i) = a(i, j);
    return t;
}

// Column-stacking vectorization.
inline std::vector<double> vec(const Matrix& m) { return m.data; }

inline Matrix unvec(const std::vector<double>& v, int rows, int cols) {
    if (static_cast<int>(v.size()) != rows * cols)
        throw DimensionError("unvec: length does not match shape");
    Matrix m(rows, cols);
    m.data = v;
    return m;
}

// Kronecker product; block (i,j) of the result is a(i,j)*b.
inline Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix k(a.rows * b.rows, a.cols * b.cols);
    for (int ja = 0; ja < a.cols; ++ja)
        for (int ia = 0; ia < a.rows; ++ia) {
            const double aij = a(ia, ja);
            for (int jb = 0; jb < b.cols; ++jb)
                for (int ib = 0; ib < b.rows; ++ib)
                    k(ia * b.rows + ib, ja * b.cols + jb) = aij * b(ib, jb);
        }
    return k;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DimensionError("squared_distance: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// Median of the M(M-1)/2 pairwise Euclidean distances. Even counts take the
// element at index floor((n-1)/2) of the sorted distances (lower of the
// middle pair), which is deterministic and cheap. 0 for a single point.
inline double median_pairwise_distance(const std::vector<std::vector<double>>& points) {
    if (points.empty()) throw DimensionError("median_pairwise_distance: empty input");
    const std::size_t m = points.size();
    if (m == 1) return 0.0;
    std::vector<double> d2;
    d2.reserve(m * (m - 1) / 2);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) d2.push_back(squared_distance(points[i], points[j]));
    const std::size_t mid = (d2.size() - 1) / 2;
    std::nth_element(d2.begin(), d2.begin() + mid, d2.end());
    return std::sqrt(d2[mid]);
}

// Lower-triangular Cholesky factor of an SPD matrix.
inline Matrix cholesky(const Matrix& a) {
    if (a.rows != a.cols) throw DimensionError("cholesky: matrix not square");
    const int n = a.rows;
    Matrix l(n, n);
    for (int j = 0; j < n; ++j) {
        double diag = a(j, j);
        for (int k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (!(diag > 0.0)) throw NumericError("cholesky: matrix not positive definite");
        l(j, j) = std::sqrt(diag);
        for (int i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

inline double log_det_from_cholesky(const Matrix& l) {
    double s = 0.0;
    for (int i = 0; i < l.rows; ++i) s += std::log(l(i, i));
    return 2.0 * s;
}

// Solve (L L^T) x = b given the Cholesky factor.
inline std::vector<double> cholesky_solve(const Matrix& l, std::vector<double> b) {
    const int n = l.rows;
    if (static_cast<int>(b.size()) != n) throw DimensionError("cholesky_solve: size mismatch");
    for (int i = 0; i < n; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= l(i, k) * b[k];
        b[i] = s / l(i, i);
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = b[i];
        for (int k = i + 1; k < n; ++k) s -= l(k, i) * b[k];
        b[i] = s / l(i, i);
    }
    return b;
}

// Determinant via LU with partial pivoting.
inline double determinant(Matrix a) {
    if (a.rows != a.cols) throw DimensionError("determinant: matrix not square");
    const int n = a.rows;
    double det = 1.0;
    for (int k = 0; k < n; ++k) {
        int piv = k;
        for (int i = k + 1; i < n; ++i)
            if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
        if (a(piv, k) == 0.0) return 0.0;
        if (piv != k) {
            for (int j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
            det = -det;
        }
        det *= a(k, k);
        for (int i = k + 1; i < n; ++i) {
            const double f = a(i, k) / a(k, k);
            for (int j = k; j < n; ++j) a(i, j) -= f * a(k, j);
        }
    }
    return det;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix: a = V diag(w) V^T.
// Plenty for the small covariance factors handled here.
inline void symmetric_eigen(const Matrix& a, Matrix& eigvecs, std::vector<double>& eigvals) {
    if (a.rows != a.cols) throw DimensionError("symmetric_eigen: matrix not square");
    const int n = a.rows;
    Matrix s = a;
    eigvecs = Matrix::identity(n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < j; ++i) off += s(i, j) * s(i, j);
        if (off < 1e-28) break;
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) {
                if (s(p, q) == 0.0) continue;
                const double theta = (s(q, q) - s(p, p)) / (2.0 * s(p, q));
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                for (int k = 0; k < n; ++k) {
                    const double skp = s(k, p), skq = s(k, q);
                    s(k, p) = c * skp - sn * skq;
                    s(k, q) = sn * skp + c * skq;
                }
                for (int k = 0; k < n; ++k) {
                    const double spk = s(p, k), sqk = s(q, k);
                    s(p, k) = c * spk - sn * sqk;
                    s(q, k) = sn * spk + c * sqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = eigvecs(k, p), vkq = eigvecs(k, q);
                    eigvecs(k, p) = c * vkp - sn * vkq;
                    eigvecs(k, q) = sn * vkp + c * vkq;
                }
            }
    }
    eigvals.resize(n);
    for (int i = 0; i < n; ++i) eigvals[i] = s(i, i);
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace s2vgd
