#pragma once

#include <cmath>
#include <cstring>
#include <utility>
#include <vector>

#include "s2vgd/errors.hpp"
#include "s2vgd/householder.hpp"
#include "s2vgd/matrix.hpp"

namespace s2vgd {

// Inverse-gamma hyperprior constants shared by the per-layer scales.
struct HyperPrior {
    double a = 1.0;
    double b = 0.1;
};

struct LayerShape {
    int l1 = 0; // input width
    int l2 = 0; // output width
    int K = 0;  // Householder flow length for both factors
};

// Parameter counts for one decomposed layer. `structural` covers the core
// matrix, both diagonals and both vector banks; `total` adds bias and the
// three log-scales actually carried in the particle.
inline std::pair<long, long> param_count(int l1, int l2, int K) {
    if (K > std::min(l1, l2)) throw DimensionError("param_count: K exceeds min(l1, l2)");
    const long structural = static_cast<long>(K + 1) * (l1 + l2) + static_cast<long>(l1) * l2;
    return {structural, structural + l2 + 3};
}

// Segment order within a particle: C | d1 | d2 | p vectors | q vectors |
// bias | log_lambda log_phi log_psi.
struct LayerLayout {
    LayerShape shape;
    int offset = 0;

    int c_off() const { return offset; }
    int d1_off() const { return c_off() + shape.l1 * shape.l2; }
    int d2_off() const { return d1_off() + shape.l1; }
    int p_off() const { return d2_off() + shape.l2; }
    int q_off() const { return p_off() + shape.K * shape.l1; }
    int bias_off() const { return q_off() + shape.K * shape.l2; }
    int scales_off() const { return bias_off() + shape.l2; }
    int size() const { return scales_off() + 3 - offset; }
};

// Read-only view of one layer inside a flat particle.
struct LayerView {
    LayerShape shape;
    const double* c;      // l1 x l2, column-major
    const double* d1;     // l1
    const double* d2;     // l2
    const double* p_vecs; // K contiguous vectors of length l1
    const double* q_vecs; // K contiguous vectors of length l2
    const double* bias;   // l2
    const double* scales; // log_lambda, log_phi, log_psi
};

// Mutable counterpart over a gradient buffer with identical layout.
struct LayerGrad {
    LayerShape shape;
    double* c;
    double* d1;
    double* d2;
    double* p_vecs;
    double* q_vecs;
    double* bias;
    double* scales;
};

inline LayerView layer_view(const LayerLayout& lo, const double* base) {
    return {lo.shape,          base + lo.c_off(),    base + lo.d1_off(),
            base + lo.d2_off(), base + lo.p_off(),    base + lo.q_off(),
            base + lo.bias_off(), base + lo.scales_off()};
}

inline LayerGrad layer_grad(const LayerLayout& lo, double* base) {
    return {lo.shape,          base + lo.c_off(),    base + lo.d1_off(),
            base + lo.d2_off(), base + lo.p_off(),    base + lo.q_off(),
            base + lo.bias_off(), base + lo.scales_off()};
}

// Intermediates cached by the forward pass plus backward scratch. Reused
// across calls to avoid churn; sized lazily.
struct LayerCache {
    std::vector<double> t0, t1, t2, t3; // P^T x, d1*t0, C^T t1, d2*t2
    std::vector<double> g1, g2, stages;
};

// Pre-activation output W^T x + bias evaluated factor by factor as
// Q diag(d2) C^T diag(d1) P^T x + bias. W itself is never formed; the cost
// is O(K(l1+l2) + l1 l2).
inline void layer_forward(const LayerView& v, const double* x, double* y, LayerCache& cache) {
    const int l1 = v.shape.l1, l2 = v.shape.l2, K = v.shape.K;
    cache.t0.assign(x, x + l1);
    detail::flow_column(v.p_vecs, K, l1, cache.t0.data(), /*transpose=*/true);
    cache.t1.resize(l1);
    for (int i = 0; i < l1; ++i) cache.t1[i] = v.d1[i] * cache.t0[i];
    cache.t2.assign(l2, 0.0);
    for (int j = 0; j < l2; ++j) {
        const double* col = v.c + static_cast<std::size_t>(j) * l1;
        double s = 0.0;
        for (int i = 0; i < l1; ++i) s += col[i] * cache.t1[i];
        cache.t2[j] = s;
    }
    cache.t3.resize(l2);
    for (int j = 0; j < l2; ++j) cache.t3[j] = v.d2[j] * cache.t2[j];
    std::memcpy(y, cache.t3.data(), sizeof(double) * l2);
    detail::flow_column(v.q_vecs, K, l2, y, /*transpose=*/false);
    for (int j = 0; j < l2; ++j) y[j] += v.bias[j];
}

// Reverse-mode through layer_forward. `upstream` is dLoss/dy (length l2);
// parameter gradients accumulate into g, and when grad_x is non-null the
// gradient at x (length l1) is written there.
inline void layer_backward(const LayerView& v, const double* x, const LayerCache& cache,
                           const double* upstream, LayerGrad& g, double* grad_x,
                           LayerCache& scratch) {
    const int l1 = v.shape.l1, l2 = v.shape.l2, K = v.shape.K;
    for (int j = 0; j < l2; ++j) g.bias[j] += upstream[j];

    scratch.g2.assign(upstream, upstream + l2);
    scratch.stages.resize(static_cast<std::size_t>(K + 1) * std::max(l1, l2));
    detail::flow_column_backward(v.q_vecs, K, l2, cache.t3.data(), scratch.g2.data(), g.q_vecs,
                                 scratch.stages.data(), /*transpose=*/false);
    // scratch.g2 now holds dLoss/dt3
    for (int j = 0; j < l2; ++j) {
        g.d2[j] += scratch.g2[j] * cache.t2[j];
        scratch.g2[j] *= v.d2[j]; // becomes dLoss/dt2
    }
    scratch.g1.assign(l1, 0.0);
    for (int j = 0; j < l2; ++j) {
        const double gj = scratch.g2[j];
        double* gcol = g.c + static_cast<std::size_t>(j) * l1;
        const double* col = v.c + static_cast<std::size_t>(j) * l1;
        for (int i = 0; i < l1; ++i) {
            gcol[i] += cache.t1[i] * gj;
            scratch.g1[i] += col[i] * gj;
        }
    }
    for (int i = 0; i < l1; ++i) {
        g.d1[i] += scratch.g1[i] * cache.t0[i];
        scratch.g1[i] *= v.d1[i]; // becomes dLoss/dt0
    }
    detail::flow_column_backward(v.p_vecs, K, l1, x, scratch.g1.data(), g.p_vecs,
                                 scratch.stages.data(), /*transpose=*/true);
    if (grad_x) std::memcpy(grad_x, scratch.g1.data(), sizeof(double) * l1);
}

// Dense W = P diag(d1) C diag(d2) Q^T, for oracles and inspection.
inline Matrix materialize_weight(const LayerView& v) {
    const int l1 = v.shape.l1, l2 = v.shape.l2, K = v.shape.K;
    Matrix t(l1, l2);
    for (int j = 0; j < l2; ++j)
        for (int i = 0; i < l1; ++i)
            t(i, j) = v.d1[i] * v.c[static_cast<std::size_t>(j) * l1 + i] * v.d2[j];
    for (int j = 0; j < l2; ++j)
        detail::flow_column(v.p_vecs, K, l1, t.data.data() + static_cast<std::size_t>(j) * l1,
                            /*transpose=*/false); // t <- P t
    Matrix tt = transpose(t);
    for (int j = 0; j < l1; ++j)
        detail::flow_column(v.q_vecs, K, l2, tt.data.data() + static_cast<std::size_t>(j) * l2,
                            /*transpose=*/false); // tt <- Q t^T, so tt^T = t Q^T
    return transpose(tt);
}

namespace detail {

inline double gaussian_group_log_density(const double* xs, int n, double log_var) {
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    const double inv_var = std::exp(-log_var);
    double ss = 0.0;
    for (int i = 0; i < n; ++i) ss += xs[i] * xs[i];
    return -0.5 * n * (kLog2Pi + log_var) - 0.5 * ss * inv_var;
}

// log density of sigma^2 ~ InvGamma(a, b) expressed over u = log sigma^2,
// change-of-variables term folded in.
inline double inv_gamma_log_density_logspace(double u, double a, double b) {
    return a * std::log(b) - std::lgamma(a) - a * u - b * std::exp(-u);
}

} // namespace detail

// Log prior of one layer: Gaussian groups for C (variance lambda), the
// Householder vectors and bias (variance phi), the diagonals (variance psi),
// plus the inverse-gamma hyperprior of each scale in log-space.
inline double layer_log_prior(const LayerView& v, const HyperPrior& h) {
    const int l1 = v.shape.l1, l2 = v.shape.l2, K = v.shape.K;
    const double u_lambda = v.scales[0], u_phi = v.scales[1], u_psi = v.scales[2];
    double lp = detail::gaussian_group_log_density(v.c, l1 * l2, u_lambda);
    lp += detail::gaussian_group_log_density(v.p_vecs, K * l1, u_phi);
    lp += detail::gaussian_group_log_density(v.q_vecs, K * l2, u_phi);
    lp += detail::gaussian_group_log_density(v.bias, l2, u_phi);
    lp += detail::gaussian_group_log_density(v.d1, l1, u_psi);
    lp += detail::gaussian_group_log_density(v.d2, l2, u_psi);
    lp += detail::inv_gamma_log_density_logspace(u_lambda, h.a, h.b);
    lp += detail::inv_gamma_log_density_logspace(u_phi, h.a, h.b);
    lp += detail::inv_gamma_log_density_logspace(u_psi, h.a, h.b);
    return lp;
}

namespace detail {

// Accumulates d log N(xs; 0, e^u I)/d xs and returns (n, sum of squares) for
// the scale gradient.
inline std::pair<int, double> gaussian_group_grad(const double* xs, double* gs, int n,
                                                  double log_var) {
    const double inv_var = std::exp(-log_var);
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
        ss += xs[i] * xs[i];
        gs[i] -= xs[i] * inv_var;
    }
    return {n, ss};
}

} // namespace detail

// layer_log_prior plus exact gradients accumulated into g.
inline double layer_log_prior_grad(const LayerView& v, const HyperPrior& h, LayerGrad& g) {
    const int l1 = v.shape.l1, l2 = v.shape.l2, K = v.shape.K;
    const double u_lambda = v.scales[0], u_phi = v.scales[1], u_psi = v.scales[2];
    const double lp = layer_log_prior(v, h);

    auto [n_c, ss_c] = detail::gaussian_group_grad(v.c, g.c, l1 * l2, u_lambda);
    g.scales[0] += -0.5 * n_c + 0.5 * ss_c * std::exp(-u_lambda);

    auto [n_p, ss_p] = detail::gaussian_group_grad(v.p_vecs, g.p_vecs, K * l1, u_phi);
    auto [n_q, ss_q] = detail::gaussian_group_grad(v.q_vecs, g.q_vecs, K * l2, u_phi);
    auto [n_b, ss_b] = detail::gaussian_group_grad(v.bias, g.bias, l2, u_phi);
    g.scales[1] += -0.5 * (n_p + n_q + n_b) + 0.5 * (ss_p + ss_q + ss_b) * std::exp(-u_phi);

    auto [n_d1, ss_d1] = detail::gaussian_group_grad(v.d1, g.d1, l1, u_psi);
    auto [n_d2, ss_d2] = detail::gaussian_group_grad(v.d2, g.d2, l2, u_psi);
    g.scales[2] += -0.5 * (n_d1 + n_d2) + 0.5 * (ss_d1 + ss_d2) * std::exp(-u_psi);

    g.scales[0] += -h.a + h.b * std::exp(-u_lambda);
    g.scales[1] += -h.a + h.b * std::exp(-u_phi);
    g.scales[2] += -h.a + h.b * std::exp(-u_psi);
    return lp;
}

} // namespace s2vgd
