#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "s2vgd/errors.hpp"
#include "s2vgd/matrix.hpp"
#include "s2vgd/rng.hpp"

namespace s2vgd {

// Guard on ||v||^2. Vectors are initialized i.i.d. standard normal so a
// collapse below this is pathological; the guard turns silent NaNs into a
// hard error telling the caller to re-initialize.
constexpr double kHouseholderNormFloor = 1e-12;

namespace detail {

// y = x - 2 <x,v>/<v,v> v, the reflection applied without materializing H.
inline void reflect(const double* v, double* x, int dim) {
    double n = 0.0, s = 0.0;
    for (int i = 0; i < dim; ++i) {
        n += v[i] * v[i];
        s += v[i] * x[i];
    }
    if (n < kHouseholderNormFloor)
        throw NumericError("householder: vector norm below floor, re-initialize");
    const double a = 2.0 * s / n;
    for (int i = 0; i < dim; ++i) x[i] -= a * v[i];
}

// Reverse-mode through one reflection. x is the input the reflection saw,
// g the gradient at its output; g becomes the gradient at x and grad_v
// accumulates the gradient for v.
inline void reflect_backward(const double* v, const double* x, double* g, double* grad_v,
                             int dim) {
    double n = 0.0, s = 0.0, t = 0.0;
    for (int i = 0; i < dim; ++i) {
        n += v[i] * v[i];
        s += v[i] * x[i];
        t += v[i] * g[i];
    }
    if (n < kHouseholderNormFloor)
        throw NumericError("householder: vector norm below floor, re-initialize");
    const double two_t_n = 2.0 * t / n;
    const double two_s_n = 2.0 * s / n;
    const double four_st_nn = 4.0 * s * t / (n * n);
    for (int i = 0; i < dim; ++i) {
        grad_v[i] += -two_t_n * x[i] + four_st_nn * v[i] - two_s_n * g[i];
        g[i] -= two_t_n * v[i]; // H is symmetric, so the input grad is H g
    }
}

// Applies the flow to one in-place column. transpose=false runs H_1 first,
// H_K last (the product H_K...H_1); transpose=true reverses the order.
inline void flow_column(const double* vecs, int K, int dim, double* x, bool transpose) {
    if (!transpose) {
        for (int k = 0; k < K; ++k) reflect(vecs + static_cast<std::size_t>(k) * dim, x, dim);
    } else {
        for (int k = K - 1; k >= 0; --k)
            reflect(vecs + static_cast<std::size_t>(k) * dim, x, dim);
    }
}

// Reverse-mode through the flow for one column. Stage inputs are recomputed
// into `stages`, which must hold (K+1)*dim doubles. grad_vecs has the same
// layout as vecs and is accumulated into; g starts as the upstream gradient
// and ends as the gradient at the column input.
inline void flow_column_backward(const double* vecs, int K, int dim, const double* x_in,
                                 double* g, double* grad_vecs, double* stages,
                                 bool transpose) {
    std::memcpy(stages, x_in, sizeof(double) * dim);
    for (int m = 0; m < K; ++m) {
        const int k = transpose ? K - 1 - m : m;
        double* next = stages + static_cast<std::size_t>(m + 1) * dim;
        std::memcpy(next, stages + static_cast<std::size_t>(m) * dim, sizeof(double) * dim);
        reflect(vecs + static_cast<std::size_t>(k) * dim, next, dim);
    }
    for (int m = K - 1; m >= 0; --m) {
        const int k = transpose ? K - 1 - m : m;
        reflect_backward(vecs + static_cast<std::size_t>(k) * dim,
                         stages + static_cast<std::size_t>(m) * dim, g,
                         grad_vecs + static_cast<std::size_t>(k) * dim, dim);
    }
}

} // namespace detail

// Bank of K Householder vectors of a common dimension, stored contiguously
// (vector k occupies [k*dim, (k+1)*dim)).
struct FlowBank {
    int dim = 0;
    int K = 0;
    std::vector<double> storage;

    FlowBank() = default;

    FlowBank(int dim_, int K_) : dim(dim_), K(K_), storage(static_cast<std::size_t>(dim_) * K_) {
        if (K_ > dim_) throw DimensionError("FlowBank: K exceeds dimension");
    }

    static FlowBank random(int dim, int K, RngStream& stream) {
        FlowBank b(dim, K);
        for (auto& x : b.storage) x = stream.gaussian();
        return b;
    }

    static FlowBank from_vectors(const std::vector<std::vector<double>>& vs) {
        if (vs.empty()) throw DimensionError("FlowBank: need dim, use FlowBank(dim, 0)");
        FlowBank b(static_cast<int>(vs[0].size()), static_cast<int>(vs.size()));
        for (int k = 0; k < b.K; ++k) {
            if (static_cast<int>(vs[k].size()) != b.dim)
                throw DimensionError("FlowBank: ragged vector lengths");
            std::copy(vs[k].begin(), vs[k].end(), b.storage.begin() + static_cast<std::size_t>(k) * b.dim);
        }
        return b;
    }

    const double* vector(int k) const { return storage.data() + static_cast<std::size_t>(k) * dim; }
};

inline std::vector<double> householder_apply(const std::vector<double>& v,
                                             std::vector<double> x) {
    if (v.size() != x.size()) throw DimensionError("householder_apply: length mismatch");
    detail::reflect(v.data(), x.data(), static_cast<int>(x.size()));
    return x;
}

inline std::vector<double> flow_apply(const FlowBank& bank, std::vector<double> x,
                                      bool transpose = false) {
    if (static_cast<int>(x.size()) != bank.dim)
        throw DimensionError("flow_apply: vector length != bank dim");
    detail::flow_column(bank.storage.data(), bank.K, bank.dim, x.data(), transpose);
    return x;
}

inline Matrix flow_apply(const FlowBank& bank, Matrix x, bool transpose = false) {
    if (x.rows != bank.dim) throw DimensionError("flow_apply: matrix rows != bank dim");
    for (int j = 0; j < x.cols; ++j)
        detail::flow_column(bank.storage.data(), bank.K, bank.dim,
                            x.data.data() + static_cast<std::size_t>(j) * x.rows, transpose);
    return x;
}

struct FlowBackprop {
    std::vector<std::vector<double>> grad_vectors; // one per Householder vector
    Matrix grad_input;
};

// Exact gradients through the flow given upstream = dLoss/dOutput.
// Intermediate activations are recomputed per column.
inline FlowBackprop flow_backprop(const FlowBank& bank, const Matrix& x, const Matrix& upstream,
                                  bool transpose = false) {
    if (x.rows != bank.dim) throw DimensionError("flow_backprop: matrix rows != bank dim");
    if (upstream.rows != x.rows || upstream.cols != x.cols)
        throw DimensionError("flow_backprop: upstream shape mismatch");
    std::vector<double> grad_vecs(bank.storage.size(), 0.0);
    Matrix grad_x = upstream;
    std::vector<double> stages(static_cast<std::size_t>(bank.K + 1) * bank.dim);
    for (int j = 0; j < x.cols; ++j)
        detail::flow_column_backward(bank.storage.data(), bank.K, bank.dim,
                                     x.data.data() + static_cast<std::size_t>(j) * x.rows,
                                     grad_x.data.data() + static_cast<std::size_t>(j) * x.rows,
                                     grad_vecs.data(), stages.data(), transpose);
    FlowBackprop out;
    out.grad_vectors.resize(bank.K);
    for (int k = 0; k < bank.K; ++k)
        out.grad_vectors[k].assign(grad_vecs.begin() + static_cast<std::size_t>(k) * bank.dim,
                                   grad_vecs.begin() + static_cast<std::size_t>(k + 1) * bank.dim);
    out.grad_input = std::move(grad_x);
    return out;
}

// Dense dim x dim product H_K ... H_1, used as the test oracle for the
// matrix-free path.
inline Matrix materialize_orthogonal(const FlowBank& bank) {
    return flow_apply(bank, Matrix::identity(bank.dim), false);
}

} // namespace s2vgd
