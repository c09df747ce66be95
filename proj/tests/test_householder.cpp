#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "s2vgd/householder.hpp"
#include "s2vgd/matrix.hpp"
#include "s2vgd/rng.hpp"

using namespace s2vgd;

namespace {

double norm2(const std::vector<double>& v) { return std::sqrt(dot(v, v)); }

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::vector<double> mat_vec(const Matrix& m, const std::vector<double>& x) {
    std::vector<double> y(m.rows, 0.0);
    for (int j = 0; j < m.cols; ++j)
        for (int i = 0; i < m.rows; ++i) y[i] += m(i, j) * x[j];
    return y;
}

} // namespace

TEST_CASE("householder_apply basic reflections") {
    // v = e1 flips the first coordinate
    const auto y = householder_apply({1.0, 0.0}, {3.0, 4.0});
    REQUIRE(y[0] == -3.0);
    REQUIRE(y[1] == 4.0);

    // x orthogonal to v is untouched
    const auto z = householder_apply({1.0, 0.0, 0.0}, {0.0, 2.0, -5.0});
    REQUIRE(z == std::vector<double>{0.0, 2.0, -5.0});

    REQUIRE_THROWS_AS(householder_apply({0.0, 0.0}, {1.0, 1.0}), NumericError);
}

TEST_CASE("householder_apply matches the explicit matrix") {
    RngStream stream(31, 0);
    const int dim = 7;
    const auto v = gaussian_draws(stream, dim, 0.0, 1.0);
    const auto x = gaussian_draws(stream, dim, 0.0, 1.0);
    const FlowBank bank = FlowBank::from_vectors({v});
    const Matrix h = materialize_orthogonal(bank);
    REQUIRE(max_abs_diff(householder_apply(v, x), mat_vec(h, x)) < 1e-12);
}

TEST_CASE("householder involution and scale invariance") {
    RngStream stream(37, 0);
    const auto v = gaussian_draws(stream, 6, 0.0, 1.0);
    const auto x = gaussian_draws(stream, 6, 0.0, 1.0);
    REQUIRE(max_abs_diff(householder_apply(v, householder_apply(v, x)), x) < 1e-12);

    auto cv = v;
    for (auto& c : cv) c *= -17.5;
    REQUIRE(max_abs_diff(householder_apply(v, x), householder_apply(cv, x)) < 1e-12);
}

TEST_CASE("flow_apply trivial cases") {
    RngStream stream(41, 0);
    const auto x = gaussian_draws(stream, 5, 0.0, 1.0);
    const FlowBank empty(5, 0);
    REQUIRE(flow_apply(empty, x) == x);

    const auto v = gaussian_draws(stream, 5, 0.0, 1.0);
    const FlowBank one = FlowBank::from_vectors({v});
    REQUIRE(max_abs_diff(flow_apply(one, x), householder_apply(v, x)) == 0.0);
}

TEST_CASE("flow_apply matches the explicit matrix product") {
    RngStream stream(43, 0);
    const int dim = 6, K = 3;
    const FlowBank bank = FlowBank::random(dim, K, stream);
    Matrix x(dim, 4);
    for (auto& e : x.data) e = stream.gaussian();

    // explicit H_K ... H_1 via dense per-reflection matrices
    Matrix product = Matrix::identity(dim);
    for (int k = 0; k < K; ++k) {
        const std::vector<double> v(bank.vector(k), bank.vector(k) + dim);
        Matrix h = Matrix::identity(dim);
        const double n = dot(v, v);
        for (int j = 0; j < dim; ++j)
            for (int i = 0; i < dim; ++i) h(i, j) -= 2.0 * v[i] * v[j] / n;
        product = multiply(h, product);
    }
    const Matrix via_flow = flow_apply(bank, x);
    const Matrix via_dense = multiply(product, x);
    for (std::size_t i = 0; i < via_flow.data.size(); ++i)
        REQUIRE_THAT(via_flow.data[i], Catch::Matchers::WithinAbs(via_dense.data[i], 1e-11));

    const Matrix via_flow_t = flow_apply(bank, x, true);
    const Matrix via_dense_t = multiply(transpose(product), x);
    for (std::size_t i = 0; i < via_flow_t.data.size(); ++i)
        REQUIRE_THAT(via_flow_t.data[i], Catch::Matchers::WithinAbs(via_dense_t.data[i], 1e-11));

    REQUIRE_THROWS_AS(flow_apply(bank, Matrix(dim + 1, 2)), DimensionError);
}

TEST_CASE("flow preserves norms and inverts with the transpose") {
    RngStream stream(47, 0);
    const FlowBank bank = FlowBank::random(8, 4, stream);
    const auto x = gaussian_draws(stream, 8, 0.0, 1.0);
    const auto y = flow_apply(bank, x);
    REQUIRE_THAT(norm2(y), Catch::Matchers::WithinAbs(norm2(x), 1e-12));
    REQUIRE(max_abs_diff(flow_apply(bank, flow_apply(bank, x, true)), x) < 1e-11);
}

TEST_CASE("materialize_orthogonal properties") {
    const FlowBank e1 = FlowBank::from_vectors({{1.0, 0.0, 0.0}});
    const Matrix h = materialize_orthogonal(e1);
    REQUIRE(h(0, 0) == -1.0);
    REQUIRE(h(1, 1) == 1.0);
    REQUIRE(h(2, 2) == 1.0);

    RngStream stream(53, 0);
    for (int rep = 0; rep < 8; ++rep) {
        const int dim = 3 + static_cast<int>(stream.uniform_below(8));
        const int K = static_cast<int>(stream.uniform_below(dim + 1));
        const FlowBank bank = FlowBank::random(dim, K, stream);
        const Matrix p = materialize_orthogonal(bank);
        const Matrix ptp = multiply(transpose(p), p);
        for (int j = 0; j < dim; ++j)
            for (int i = 0; i < dim; ++i)
                REQUIRE_THAT(ptp(i, j),
                             Catch::Matchers::WithinAbs(i == j ? 1.0 : 0.0, 1e-10));
        const double want = (K % 2 == 0) ? 1.0 : -1.0;
        REQUIRE_THAT(determinant(p), Catch::Matchers::WithinAbs(want, 1e-8));
    }
}

TEST_CASE("flow_backprop matches central finite differences") {
    RngStream stream(59, 0);
    const int dim = 5, K = 2, cols = 3;
    FlowBank bank = FlowBank::random(dim, K, stream);
    Matrix x(dim, cols);
    for (auto& e : x.data) e = stream.gaussian();
    Matrix upstream(dim, cols);
    for (auto& e : upstream.data) e = stream.gaussian();

    for (const bool transpose : {false, true}) {
        const auto bp = flow_backprop(bank, x, upstream, transpose);
        const auto loss = [&](const FlowBank& b, const Matrix& xx) {
            const Matrix y = flow_apply(b, xx, transpose);
            double s = 0.0;
            for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * upstream.data[i];
            return s;
        };
        const double step = 1e-5;
        for (int k = 0; k < K; ++k)
            for (int d = 0; d < dim; ++d) {
                FlowBank hi = bank, lo = bank;
                hi.storage[k * dim + d] += step;
                lo.storage[k * dim + d] -= step;
                const double fd = (loss(hi, x) - loss(lo, x)) / (2 * step);
                const double an = bp.grad_vectors[k][d];
                REQUIRE_THAT(an, Catch::Matchers::WithinRel(fd, 1e-5) ||
                                     Catch::Matchers::WithinAbs(fd, 1e-7));
            }
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            Matrix hi = x, lo = x;
            hi.data[i] += step;
            lo.data[i] -= step;
            const double fd = (loss(bank, hi) - loss(bank, lo)) / (2 * step);
            REQUIRE_THAT(bp.grad_input.data[i], Catch::Matchers::WithinRel(fd, 1e-5) ||
                                                    Catch::Matchers::WithinAbs(fd, 1e-7));
        }
    }
}

TEST_CASE("flow_backprop trivial cases") {
    RngStream stream(61, 0);
    const FlowBank bank = FlowBank::random(4, 2, stream);
    Matrix x(4, 2);
    for (auto& e : x.data) e = stream.gaussian();

    const Matrix zero(4, 2);
    const auto bp = flow_backprop(bank, x, zero);
    for (const auto& gv : bp.grad_vectors)
        for (double g : gv) REQUIRE(g == 0.0);
    for (double g : bp.grad_input.data) REQUIRE(g == 0.0);

    const FlowBank empty(4, 0);
    Matrix upstream(4, 2);
    for (auto& e : upstream.data) e = stream.gaussian();
    const auto bp0 = flow_backprop(empty, x, upstream);
    REQUIRE(bp0.grad_vectors.empty());
    REQUIRE(bp0.grad_input.data == upstream.data);
}
