#pragma once

#include <cmath>
#include <vector>

#include "s2vgd/errors.hpp"
#include "s2vgd/matrix.hpp"
#include "s2vgd/rng.hpp"

namespace s2vgd {

// Matrix variate Gaussian log-density with row covariance u and column
// covariance v:
//   -1/2 tr[v^-1 (w-mean)^T u^-1 (w-mean)]
//   - (l1*l2/2) log 2pi - (l1/2) log|v| - (l2/2) log|u|
// Equivalent to the multivariate normal of vec(w) with covariance v (x) u.
inline double mvg_log_density(const Matrix& w, const Matrix& mean, const Matrix& u,
                              const Matrix& v) {
    if (w.rows != mean.rows || w.cols != mean.cols)
        throw DimensionError("mvg_log_density: w and mean shapes differ");
    if (u.rows != w.rows || v.rows != w.cols)
        throw DimensionError("mvg_log_density: covariance shapes do not match w");
    const int l1 = w.rows, l2 = w.cols;
    const Matrix lu = cholesky(u); // throws NumericError when not SPD
    const Matrix lv = cholesky(v);

    // tr[v^-1 d^T u^-1 d] = sum_j (column j of u^-1 d) . (column j of d v^-1)
    Matrix d(l1, l2);
    for (int j = 0; j < l2; ++j)
        for (int i = 0; i < l1; ++i) d(i, j) = w(i, j) - mean(i, j);

    Matrix uinv_d(l1, l2);
    for (int j = 0; j < l2; ++j) {
        std::vector<double> col(d.data.begin() + static_cast<std::size_t>(j) * l1,
                                d.data.begin() + static_cast<std::size_t>(j + 1) * l1);
        col = cholesky_solve(lu, std::move(col));
        for (int i = 0; i < l1; ++i) uinv_d(i, j) = col[i];
    }
    Matrix d_vinv_t(l2, l1); // (d v^-1)^T = v^-1 d^T
    const Matrix dt = transpose(d);
    for (int j = 0; j < l1; ++j) {
        std::vector<double> col(dt.data.begin() + static_cast<std::size_t>(j) * l2,
                                dt.data.begin() + static_cast<std::size_t>(j + 1) * l2);
        col = cholesky_solve(lv, std::move(col));
        for (int i = 0; i < l2; ++i) d_vinv_t(i, j) = col[i];
    }
    double tr = 0.0;
    for (int j = 0; j < l2; ++j)
        for (int i = 0; i < l1; ++i) tr += uinv_d(i, j) * d_vinv_t(j, i);

    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    return -0.5 * tr - 0.5 * l1 * l2 * kLog2Pi - 0.5 * l1 * log_det_from_cholesky(lv) -
           0.5 * l2 * log_det_from_cholesky(lu);
}

// Draws w = p diag(s1) z diag(s2) q^T + mean with z i.i.d. standard normal,
// where (p, s1^2) and (q, s2^2) are the symmetric eigendecompositions of u
// and v. The factors are exactly the orthogonal/diagonal pieces of the
// reparameterized layer, which is the point of sampling this way.
inline std::vector<Matrix> mvg_sample(const Matrix& mean, const Matrix& u, const Matrix& v,
                                      int n, RngStream& stream) {
    const int l1 = mean.rows, l2 = mean.cols;
    if (u.rows != l1 || u.cols != l1 || v.rows != l2 || v.cols != l2)
        throw DimensionError("mvg_sample: covariance shapes do not match mean");
    Matrix p, q;
    std::vector<double> eu, ev;
    symmetric_eigen(u, p, eu);
    symmetric_eigen(v, q, ev);
    std::vector<double> s1(l1), s2(l2);
    for (int i = 0; i < l1; ++i) {
        if (!(eu[i] > 0.0)) throw NumericError("mvg_sample: u not positive definite");
        s1[i] = std::sqrt(eu[i]);
    }
    for (int i = 0; i < l2; ++i) {
        if (!(ev[i] > 0.0)) throw NumericError("mvg_sample: v not positive definite");
        s2[i] = std::sqrt(ev[i]);
    }
    std::vector<Matrix> out;
    out.reserve(n);
    for (int s = 0; s < n; ++s) {
        Matrix z(l1, l2);
        for (auto& x : z.data) x = stream.gaussian();
        for (int j = 0; j < l2; ++j)
            for (int i = 0; i < l1; ++i) z(i, j) *= s1[i] * s2[j];
        Matrix w = multiply(multiply(p, z), transpose(q));
        for (int j = 0; j < l2; ++j)
            for (int i = 0; i < l1; ++i) w(i, j) += mean(i, j);
        out.push_back(std::move(w));
    }
    return out;
}

} // namespace s2vgd
