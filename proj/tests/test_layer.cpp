#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "s2vgd/layer.hpp"
#include "s2vgd/matrix.hpp"
#include "s2vgd/rng.hpp"

using namespace s2vgd;

namespace {

struct TestLayer {
    LayerLayout layout;
    std::vector<double> params;

    LayerView view() const { return layer_view(layout, params.data()); }
};

TestLayer make_layer(int l1, int l2, int K) {
    TestLayer t;
    t.layout.shape = {l1, l2, K};
    t.layout.offset = 0;
    t.params.assign(t.layout.size(), 0.0);
    return t;
}

TestLayer random_layer(int l1, int l2, int K, RngStream& stream) {
    TestLayer t = make_layer(l1, l2, K);
    for (auto& x : t.params) x = stream.gaussian();
    // keep scales in a moderate range
    for (int s = 0; s < 3; ++s) t.params[t.layout.scales_off() + s] = stream.uniform(-1.0, 1.0);
    return t;
}

std::vector<double> forward_of(const TestLayer& t, const std::vector<double>& x) {
    std::vector<double> y(t.layout.shape.l2);
    LayerCache cache;
    layer_forward(t.view(), x.data(), y.data(), cache);
    return y;
}

// Dense oracle: explicit five-matrix product through materialized orthogonal
// factors.
Matrix five_matrix_product(const TestLayer& t) {
    const auto v = t.view();
    const int l1 = v.shape.l1, l2 = v.shape.l2, K = v.shape.K;
    FlowBank pb(l1, K), qb(l2, K);
    std::copy(v.p_vecs, v.p_vecs + K * l1, pb.storage.begin());
    std::copy(v.q_vecs, v.q_vecs + K * l2, qb.storage.begin());
    const Matrix p = materialize_orthogonal(pb);
    const Matrix q = materialize_orthogonal(qb);
    Matrix d1(l1, l1), d2(l2, l2), c(l1, l2);
    for (int i = 0; i < l1; ++i) d1(i, i) = v.d1[i];
    for (int i = 0; i < l2; ++i) d2(i, i) = v.d2[i];
    std::copy(v.c, v.c + l1 * l2, c.data.begin());
    return multiply(multiply(multiply(multiply(p, d1), c), d2), transpose(q));
}

} // namespace

TEST_CASE("param_count formula") {
    REQUIRE(param_count(3, 2, 1).first == 16);
    for (int l1 = 1; l1 <= 6; ++l1)
        for (int l2 = 1; l2 <= 6; ++l2)
            REQUIRE(param_count(l1, l2, 0).first == l1 + l2 + l1 * l2);
    // full-covariance reference for (3,2): l1 l2 + l1^2 + l2^2 = 19 > 16
    REQUIRE(3 * 2 + 9 + 4 == 19);
    REQUIRE(param_count(3, 2, 1).first < 19);
    REQUIRE_THROWS_AS(param_count(3, 2, 3), DimensionError);
}

TEST_CASE("param_count saves parameters whenever K < min(l1, l2)") {
    // the decomposed count never exceeds the full-covariance count, and is
    // strictly smaller except exactly when (K+1)(l1+l2) = l1^2 + l2^2
    // (square layers at K = n-1)
    for (int l1 = 1; l1 <= 8; ++l1)
        for (int l2 = 1; l2 <= 8; ++l2)
            for (int k = 0; k < std::min(l1, l2); ++k) {
                const long structural = param_count(l1, l2, k).first;
                const long full = l1 * l2 + l1 * l1 + l2 * l2;
                REQUIRE(structural <= full);
                if ((k + 1) * (l1 + l2) != l1 * l1 + l2 * l2) REQUIRE(structural < full);
            }
}

TEST_CASE("param_count total matches the layout size") {
    for (int l1 = 1; l1 <= 5; ++l1)
        for (int l2 = 1; l2 <= 5; ++l2)
            for (int k = 0; k <= std::min(l1, l2); ++k) {
                LayerLayout lo;
                lo.shape = {l1, l2, k};
                REQUIRE(param_count(l1, l2, k).second == lo.size());
            }
}

TEST_CASE("materialize_weight reduces to C at K=0 with unit diagonals") {
    TestLayer t = make_layer(3, 2, 0);
    RngStream stream(101, 0);
    for (int i = 0; i < 6; ++i) t.params[t.layout.c_off() + i] = stream.gaussian();
    for (int i = 0; i < 3; ++i) t.params[t.layout.d1_off() + i] = 1.0;
    for (int i = 0; i < 2; ++i) t.params[t.layout.d2_off() + i] = 1.0;
    const Matrix w = materialize_weight(t.view());
    for (int i = 0; i < 6; ++i) REQUIRE(w.data[i] == t.params[t.layout.c_off() + i]);
}

TEST_CASE("materialize_weight scales rows and columns by the diagonals") {
    TestLayer t = make_layer(2, 1, 0);
    t.params[t.layout.c_off() + 0] = 1.5; // c1
    t.params[t.layout.c_off() + 1] = -2.0; // c2
    t.params[t.layout.d1_off() + 0] = 2.0;
    t.params[t.layout.d1_off() + 1] = 1.0;
    t.params[t.layout.d2_off() + 0] = 3.0;
    const Matrix w = materialize_weight(t.view());
    REQUIRE(w(0, 0) == 9.0);  // 2 * 1.5 * 3
    REQUIRE(w(1, 0) == -6.0); // 1 * -2 * 3
}

TEST_CASE("materialize_weight matches the five-matrix oracle") {
    RngStream stream(103, 0);
    for (int rep = 0; rep < 20; ++rep) {
        const TestLayer t = random_layer(4, 3, 2, stream);
        const Matrix w = materialize_weight(t.view());
        const Matrix oracle = five_matrix_product(t);
        for (std::size_t i = 0; i < w.data.size(); ++i)
            REQUIRE_THAT(w.data[i], Catch::Matchers::WithinAbs(oracle.data[i], 1e-11));
    }
}

TEST_CASE("materialize_weight is 1-homogeneous in C") {
    RngStream stream(107, 0);
    TestLayer t = random_layer(3, 4, 2, stream);
    const Matrix w1 = materialize_weight(t.view());
    for (int i = 0; i < 12; ++i) t.params[t.layout.c_off() + i] *= 2.0;
    const Matrix w2 = materialize_weight(t.view());
    for (std::size_t i = 0; i < w1.data.size(); ++i) REQUIRE(w2.data[i] == 2.0 * w1.data[i]);
}

TEST_CASE("layer_forward trivial cases") {
    RngStream stream(109, 0);
    TestLayer t = random_layer(4, 3, 1, stream);
    const std::vector<double> zero(4, 0.0);
    const auto y = forward_of(t, zero);
    for (int j = 0; j < 3; ++j) REQUIRE(y[j] == t.params[t.layout.bias_off() + j]);

    // K=0 with unit diagonals is a plain linear layer C^T x + bias
    TestLayer lin = make_layer(3, 2, 0);
    for (int i = 0; i < 6; ++i) lin.params[lin.layout.c_off() + i] = stream.gaussian();
    for (int i = 0; i < 3; ++i) lin.params[lin.layout.d1_off() + i] = 1.0;
    for (int i = 0; i < 2; ++i) lin.params[lin.layout.d2_off() + i] = 1.0;
    for (int i = 0; i < 2; ++i) lin.params[lin.layout.bias_off() + i] = stream.gaussian();
    const auto x = gaussian_draws(stream, 3, 0.0, 1.0);
    const auto out = forward_of(lin, x);
    const auto lv = lin.view();
    for (int j = 0; j < 2; ++j) {
        double want = lv.bias[j];
        for (int i = 0; i < 3; ++i) want += lv.c[j * 3 + i] * x[i];
        REQUIRE_THAT(out[j], Catch::Matchers::WithinAbs(want, 1e-13));
    }
}

TEST_CASE("layer_forward agrees with the materialized weight") {
    RngStream stream(113, 0);
    for (int rep = 0; rep < 100; ++rep) {
        const int l1 = 1 + static_cast<int>(stream.uniform_below(5));
        const int l2 = 1 + static_cast<int>(stream.uniform_below(5));
        const int k = static_cast<int>(stream.uniform_below(std::min(l1, l2) + 1));
        const TestLayer t = random_layer(l1, l2, k, stream);
        const auto x = gaussian_draws(stream, l1, 0.0, 1.0);
        const auto y = forward_of(t, x);
        const Matrix w = materialize_weight(t.view());
        const auto v = t.view();
        for (int j = 0; j < l2; ++j) {
            double want = v.bias[j];
            for (int i = 0; i < l1; ++i) want += w(i, j) * x[i];
            REQUIRE_THAT(y[j], Catch::Matchers::WithinAbs(want, 1e-11));
        }
    }
}

TEST_CASE("layer_log_prior pinned tiny-layer value") {
    // l1 = l2 = 1, K = 0, every parameter 0, log-scales 0, a = 1, b = 0.1:
    // four unit-variance normal log-densities at zero (C, d1, d2, bias) plus
    // three inverse-gamma log-densities in log-space.
    TestLayer t = make_layer(1, 1, 0);
    const HyperPrior h{1.0, 0.1};
    REQUIRE_THAT(layer_log_prior(t.view(), h),
                 Catch::Matchers::WithinAbs(-10.883509411800826, 1e-9));
}

TEST_CASE("growing C entries decreases the log prior") {
    RngStream stream(127, 0);
    TestLayer t = random_layer(3, 3, 1, stream);
    const HyperPrior h;
    const double before = layer_log_prior(t.view(), h);
    for (int i = 0; i < 9; ++i) t.params[t.layout.c_off() + i] *= 3.0;
    REQUIRE(layer_log_prior(t.view(), h) < before);
}

TEST_CASE("layer_log_prior gradient matches finite differences") {
    RngStream stream(131, 0);
    TestLayer t = random_layer(3, 2, 2, stream);
    const HyperPrior h{1.0, 0.1};

    std::vector<double> grad(t.params.size(), 0.0);
    LayerGrad g = layer_grad(t.layout, grad.data());
    const double value = layer_log_prior_grad(t.view(), h, g);
    REQUIRE_THAT(value, Catch::Matchers::WithinAbs(layer_log_prior(t.view(), h), 1e-12));

    const double step = 1e-6;
    for (std::size_t i = 0; i < t.params.size(); ++i) {
        TestLayer hi = t, lo = t;
        hi.params[i] += step;
        lo.params[i] -= step;
        const double fd =
            (layer_log_prior(hi.view(), h) - layer_log_prior(lo.view(), h)) / (2 * step);
        REQUIRE_THAT(grad[i], Catch::Matchers::WithinRel(fd, 1e-5) ||
                                  Catch::Matchers::WithinAbs(fd, 1e-7));
    }
}

TEST_CASE("layer_backward matches finite differences") {
    RngStream stream(137, 0);
    const TestLayer t = random_layer(4, 3, 2, stream);
    const auto x = gaussian_draws(stream, 4, 0.0, 1.0);
    const auto upstream = gaussian_draws(stream, 3, 0.0, 1.0);

    std::vector<double> y(3);
    LayerCache cache, scratch;
    layer_forward(t.view(), x.data(), y.data(), cache);
    std::vector<double> grad(t.params.size(), 0.0), grad_x(4, 0.0);
    LayerGrad g = layer_grad(t.layout, grad.data());
    layer_backward(t.view(), x.data(), cache, upstream.data(), g, grad_x.data(), scratch);

    const auto loss = [&](const TestLayer& tl, const std::vector<double>& xx) {
        std::vector<double> yy(3);
        LayerCache c2;
        layer_forward(tl.view(), xx.data(), yy.data(), c2);
        return dot(yy, upstream);
    };
    const double step = 1e-6;
    for (std::size_t i = 0; i < t.params.size(); ++i) {
        TestLayer hi = t, lo = t;
        hi.params[i] += step;
        lo.params[i] -= step;
        const double fd = (loss(hi, x) - loss(lo, x)) / (2 * step);
        REQUIRE_THAT(grad[i], Catch::Matchers::WithinRel(fd, 1e-5) ||
                                  Catch::Matchers::WithinAbs(fd, 1e-7));
    }
    for (int i = 0; i < 4; ++i) {
        auto hi = x, lo = x;
        hi[i] += step;
        lo[i] -= step;
        const double fd = (loss(t, hi) - loss(t, lo)) / (2 * step);
        REQUIRE_THAT(grad_x[i], Catch::Matchers::WithinRel(fd, 1e-5) ||
                                    Catch::Matchers::WithinAbs(fd, 1e-7));
    }
}
