#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "s2vgd/householder.hpp"
#include "s2vgd/matrix.hpp"
#include "s2vgd/mvg.hpp"
#include "s2vgd/network.hpp"
#include "s2vgd/rng.hpp"
#include "s2vgd/svgd.hpp"

namespace s2vgd {

struct DiagResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

using MvgDensityFn =
    std::function<double(const Matrix&, const Matrix&, const Matrix&, const Matrix&)>;

namespace diag_detail {

inline Matrix random_spd(int n, RngStream& stream) {
    Matrix a(n, n);
    for (auto& x : a.data) x = stream.gaussian();
    Matrix s = multiply(a, transpose(a));
    for (int i = 0; i < n; ++i) s(i, i) += n;
    return s;
}

} // namespace diag_detail

// Random flow banks must materialize to orthogonal matrices with
// determinant (-1)^K.
inline DiagResult check_orthogonality(int n_cases = 100, std::uint64_t seed = 1) {
    RngStream stream(seed, 100);
    double worst_orth = 0.0, worst_det = 0.0;
    for (int rep = 0; rep < n_cases; ++rep) {
        const int dim = 2 + static_cast<int>(stream.uniform_below(31));
        const int k = static_cast<int>(stream.uniform_below(std::min(dim, 8) + 1));
        const FlowBank bank = FlowBank::random(dim, k, stream);
        const Matrix p = materialize_orthogonal(bank);
        const Matrix ptp = multiply(transpose(p), p);
        for (int j = 0; j < dim; ++j)
            for (int i = 0; i < dim; ++i)
                worst_orth = std::max(worst_orth, std::abs(ptp(i, j) - (i == j ? 1.0 : 0.0)));
        worst_det = std::max(worst_det,
                             std::abs(determinant(p) - (k % 2 == 0 ? 1.0 : -1.0)));
    }
    DiagResult r;
    r.name = "orthogonality";
    r.pass = worst_orth < 1e-10 && worst_det < 1e-8;
    std::ostringstream os;
    os << "max |P^T P - I| = " << worst_orth << ", max |det - (-1)^K| = " << worst_det;
    r.detail = os.str();
    return r;
}

// The matrix variate density must agree with the multivariate normal of the
// vectorized matrix under the Kronecker covariance, analytically and by
// Monte Carlo. The density is injectable so a deliberately broken one is
// detectable.
inline DiagResult check_kronecker(std::uint64_t seed = 2,
                                  const MvgDensityFn& density = MvgDensityFn()) {
    const MvgDensityFn f = density ? density : MvgDensityFn(&mvg_log_density);
    RngStream stream(seed, 200);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        const int l1 = 1 + static_cast<int>(stream.uniform_below(3));
        const int l2 = 1 + static_cast<int>(stream.uniform_below(3));
        const Matrix u = diag_detail::random_spd(l1, stream);
        const Matrix v = diag_detail::random_spd(l2, stream);
        Matrix mean(l1, l2), w(l1, l2);
        for (auto& x : mean.data) x = stream.gaussian();
        for (auto& x : w.data) x = stream.gaussian();

        const Matrix cov = kron(v, u);
        const Matrix l = cholesky(cov);
        std::vector<double> d = vec(w);
        const auto mu = vec(mean);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= mu[i];
        const auto sol = cholesky_solve(l, d);
        double quad = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) quad += d[i] * sol[i];
        const double mvn = -0.5 * quad - 0.5 * static_cast<double>(d.size()) * kLog2Pi -
                           0.5 * log_det_from_cholesky(l);
        worst = std::max(worst, std::abs(f(w, mean, u, v) - mvn));
    }

    // Monte Carlo: empirical covariance of vec(W) against kron(V, U).
    const Matrix u = diag_detail::random_spd(2, stream);
    const Matrix v = diag_detail::random_spd(2, stream);
    const Matrix target = kron(v, u);
    const auto samples = mvg_sample(Matrix(2, 2), u, v, 100000, stream);
    Matrix emp(4, 4);
    for (const auto& w : samples) {
        const auto x = vec(w);
        for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 4; ++i) emp(i, j) += x[i] * x[j];
    }
    for (auto& e : emp.data) e /= static_cast<double>(samples.size());
    double max_target = 0.0, mc_err = 0.0;
    for (double t : target.data) max_target = std::max(max_target, std::abs(t));
    for (std::size_t i = 0; i < emp.data.size(); ++i)
        mc_err = std::max(mc_err, std::abs(emp.data[i] - target.data[i]));

    DiagResult r;
    r.name = "kronecker";
    r.pass = worst < 1e-8 && mc_err < 0.06 * max_target;
    std::ostringstream os;
    os << "max density gap = " << worst << ", MC covariance error = " << mc_err << " (cap "
       << 0.06 * max_target << ")";
    r.detail = os.str();
    return r;
}

// Central finite differences over every coordinate of the posterior gradient
// on a small network, both likelihoods.
inline DiagResult check_gradients(std::uint64_t seed = 3) {
    double worst = 0.0;
    for (const auto likelihood : {Likelihood::gaussian_regression, Likelihood::categorical}) {
        NetworkSpec spec;
        spec.layer_dims = {4, 5, 3};
        spec.K_per_layer = {2, 2};
        spec.likelihood = likelihood;
        const ParamLayout lo = make_layout(spec);
        RngStream stream(seed, 300);
        auto params = init_particle(spec, lo, stream);
        Batch batch;
        batch.n_total = 32;
        for (int n = 0; n < 8; ++n) {
            batch.inputs.push_back(gaussian_draws(stream, 4, 0.0, 1.0));
            if (likelihood == Likelihood::gaussian_regression)
                batch.reg_targets.push_back(gaussian_draws(stream, 3, 0.0, 1.0));
            else
                batch.cls_targets.push_back(static_cast<int>(stream.uniform_below(3)));
        }
        const auto res = log_posterior_grad(spec, lo, params, batch);
        const double step = 1e-5;
        for (int i = 0; i < lo.total; ++i) {
            auto hi = params, lo_p = params;
            hi[i] += step;
            lo_p[i] -= step;
            const double fd = (log_posterior_grad(spec, lo, hi, batch).value -
                               log_posterior_grad(spec, lo, lo_p, batch).value) /
                              (2 * step);
            const double rel =
                std::abs(res.grad[i] - fd) / std::max({1.0, std::abs(fd), std::abs(res.grad[i])});
            worst = std::max(worst, rel);
        }
    }
    DiagResult r;
    r.name = "gradients";
    r.pass = worst < 1e-4;
    std::ostringstream os;
    os << "max relative error vs central differences = " << worst;
    r.detail = os.str();
    return r;
}

// Short SVGD run on a 1-D Gaussian target with analytic score.
inline DiagResult check_svgd_gaussian(std::uint64_t seed = 4) {
    const double mu = 3.0, sigma = 2.0;
    auto grad_fn = [&](int, const std::vector<double>& theta, std::int64_t) {
        GradResult g;
        g.grad = {-(theta[0] - mu) / (sigma * sigma)};
        g.value = -0.5 * (theta[0] - mu) * (theta[0] - mu) / (sigma * sigma);
        return g;
    };
    RngStream init_stream(seed, 400);
    StepConfig step;
    step.epsilon = 0.05;
    const auto run = run_svgd([&](int) { return gaussian_draws(init_stream, 1, 0.0, 1.0); }, 50,
                              1000, grad_fn, KernelConfig{}, step, 0);
    double mean = 0.0, var = 0.0;
    for (const auto& p : run.ensemble.particles) mean += p[0];
    mean /= run.ensemble.size();
    for (const auto& p : run.ensemble.particles) var += (p[0] - mean) * (p[0] - mean);
    var /= run.ensemble.size();
    DiagResult r;
    r.name = "svgd_gaussian_1d";
    r.pass = std::abs(mean - mu) < 0.3 && std::abs(std::sqrt(var) - sigma) < 0.4;
    std::ostringstream os;
    os << "particle mean = " << mean << " (target 3), std = " << std::sqrt(var)
       << " (target 2)";
    r.detail = os.str();
    return r;
}

inline std::vector<DiagResult> run_diagnostics() {
    return {check_orthogonality(), check_kronecker(), check_gradients(),
            check_svgd_gaussian()};
}

} // namespace s2vgd
