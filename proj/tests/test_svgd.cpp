#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "s2vgd/rng.hpp"
#include "s2vgd/svgd.hpp"

using namespace s2vgd;

namespace {

std::vector<std::vector<double>> random_particles(int m, int dim, RngStream& stream) {
    std::vector<std::vector<double>> out(m);
    for (auto& p : out) p = gaussian_draws(stream, dim, 0.0, 1.0);
    return out;
}

GradResult gaussian_target_grad(const std::vector<double>& theta, double mu, double sigma) {
    GradResult g;
    g.value = -0.5 * (theta[0] - mu) * (theta[0] - mu) / (sigma * sigma);
    g.grad = {-(theta[0] - mu) / (sigma * sigma)};
    return g;
}

} // namespace

TEST_CASE("rbf kernel basics") {
    RngStream stream(307, 0);
    const auto a = gaussian_draws(stream, 5, 0.0, 1.0);
    const auto self = rbf_kernel(a, a, 2.0);
    REQUIRE(self.value == 1.0);
    for (double g : self.grad_wrt_b) REQUIRE(g == 0.0);

    const std::vector<double> b{a[0] + 1.0, a[1], a[2], a[3], a[4]};
    REQUIRE_THAT(rbf_kernel(a, b, 1e12).value, Catch::Matchers::WithinAbs(1.0, 1e-9));
}

TEST_CASE("rbf kernel gradient matches finite differences") {
    RngStream stream(311, 0);
    const auto a = gaussian_draws(stream, 4, 0.0, 1.0);
    auto b = gaussian_draws(stream, 4, 0.0, 1.0);
    const double h = 1.7;
    const auto eval = rbf_kernel(a, b, h);
    const double step = 1e-6;
    for (int d = 0; d < 4; ++d) {
        auto hi = b, lo = b;
        hi[d] += step;
        lo[d] -= step;
        const double fd = (rbf_kernel(a, hi, h).value - rbf_kernel(a, lo, h).value) / (2 * step);
        REQUIRE_THAT(eval.grad_wrt_b[d], Catch::Matchers::WithinRel(fd, 1e-6));
    }
}

TEST_CASE("median bandwidth heuristic") {
    KernelConfig cfg;
    REQUIRE_THAT(median_bandwidth({{0.0}, {1.0}}, cfg),
                 Catch::Matchers::WithinAbs(1.4426950408889634, 1e-12));
    REQUIRE(median_bandwidth({{2.0}, {2.0}, {2.0}}, cfg) == 1.0);
    REQUIRE(median_bandwidth({{5.0}}, cfg) == 1.0);

    cfg.mode = KernelConfig::Mode::fixed;
    cfg.fixed_h = 42.0;
    REQUIRE(median_bandwidth({{0.0}, {9.0}}, cfg) == 42.0);
}

TEST_CASE("svgd_direction reduces to the gradient at M=1") {
    RngStream stream(313, 0);
    const auto particles = random_particles(1, 6, stream);
    const auto grads = random_particles(1, 6, stream);
    const auto dirs = svgd_direction(particles, grads, 0.37);
    REQUIRE(dirs[0] == grads[0]); // exact, including bits
}

TEST_CASE("svgd_direction two-particle repulsion example") {
    // particles {0, 1}, zero gradients, h = 1/ln 2: the direction at particle
    // one is -(ln 2)/2, pure repulsion away from the other particle
    const std::vector<std::vector<double>> particles{{0.0}, {1.0}};
    const std::vector<std::vector<double>> grads{{0.0}, {0.0}};
    const double h = 1.0 / std::log(2.0);
    const auto dirs = svgd_direction(particles, grads, h);
    REQUIRE_THAT(dirs[0][0], Catch::Matchers::WithinAbs(-0.34657359027997264, 1e-13));
    REQUIRE_THAT(dirs[1][0], Catch::Matchers::WithinAbs(0.34657359027997264, 1e-13));
}

TEST_CASE("svgd_direction is equivariant under particle relabeling") {
    RngStream stream(317, 0);
    auto particles = random_particles(4, 3, stream);
    auto grads = random_particles(4, 3, stream);
    const auto dirs = svgd_direction(particles, grads, 1.3);
    const std::vector<int> perm{2, 0, 3, 1};
    std::vector<std::vector<double>> p2(4), g2(4);
    for (int i = 0; i < 4; ++i) {
        p2[i] = particles[perm[i]];
        g2[i] = grads[perm[i]];
    }
    const auto dirs2 = svgd_direction(p2, g2, 1.3);
    for (int i = 0; i < 4; ++i)
        for (int d = 0; d < 3; ++d)
            REQUIRE_THAT(dirs2[i][d], Catch::Matchers::WithinAbs(dirs[perm[i]][d], 1e-13));
}

TEST_CASE("huge bandwidth turns the direction into the mean gradient") {
    RngStream stream(331, 0);
    const auto particles = random_particles(6, 4, stream);
    const auto grads = random_particles(6, 4, stream);
    const auto dirs = svgd_direction(particles, grads, 1e12);
    for (int d = 0; d < 4; ++d) {
        double mean = 0.0;
        for (int j = 0; j < 6; ++j) mean += grads[j][d];
        mean /= 6.0;
        for (int i = 0; i < 6; ++i) REQUIRE(std::abs(dirs[i][d] - mean) < 1e-6);
    }
}

TEST_CASE("svgd_step applies RMSProp per coordinate") {
    Ensemble e = Ensemble::of({{1.0, -2.0}});
    StepConfig cfg;
    cfg.epsilon = 0.1;

    svgd_step(e, {{0.0, 0.0}}, cfg);
    REQUIRE(e.particles[0] == std::vector<double>{1.0, -2.0});
    REQUIRE(e.step_count == 1);

    // first step with constant direction g from a fresh accumulator
    Ensemble f = Ensemble::of({{0.0}});
    const double g = 0.7;
    svgd_step(f, {{g}}, cfg);
    const double want = cfg.epsilon * g /
                        (std::sqrt((1.0 - cfg.rmsprop_decay) * g * g) + cfg.rmsprop_eps);
    REQUIRE_THAT(f.particles[0][0], Catch::Matchers::WithinAbs(want, 1e-15));
}

TEST_CASE("block decay halves the step size on schedule") {
    StepConfig cfg;
    cfg.epsilon = 1.0;
    cfg.decay_every = 2;
    cfg.steps_per_epoch = 3;
    REQUIRE(effective_epsilon(cfg, 0) == 1.0);
    REQUIRE(effective_epsilon(cfg, 5) == 1.0);
    REQUIRE(effective_epsilon(cfg, 6) == 0.5);
    REQUIRE(effective_epsilon(cfg, 12) == 0.25);
}

TEST_CASE("repulsion-only step increases the pairwise distance") {
    Ensemble e = Ensemble::of({{0.0, 0.0}, {0.4, 0.1}});
    const double before = squared_distance(e.particles[0], e.particles[1]);
    const std::vector<std::vector<double>> zero_grads{{0.0, 0.0}, {0.0, 0.0}};
    const double h = median_bandwidth(e.particles, KernelConfig{});
    StepConfig cfg;
    cfg.epsilon = 0.01;
    svgd_step(e, svgd_direction(e.particles, zero_grads, h), cfg);
    REQUIRE(squared_distance(e.particles[0], e.particles[1]) > before);
}

TEST_CASE("degenerate identical-particle ensembles stay finite") {
    RngStream stream(337, 0);
    for (int rep = 0; rep < 20; ++rep) {
        const int m = 2 + static_cast<int>(stream.uniform_below(5));
        const auto base = gaussian_draws(stream, 3, 0.0, 1.0);
        Ensemble e = Ensemble::of(std::vector<std::vector<double>>(m, base));
        const std::vector<std::vector<double>> grads(m, gaussian_draws(stream, 3, 0.0, 1.0));
        const double h = median_bandwidth(e.particles, KernelConfig{});
        REQUIRE(h == 1.0);
        StepConfig cfg;
        svgd_step(e, svgd_direction(e.particles, grads, h), cfg);
        for (const auto& p : e.particles) REQUIRE(all_finite(p));
    }
}

TEST_CASE("ksd matches a naive double-loop oracle") {
    RngStream stream(347, 0);
    const int m = 7, dim = 3;
    const auto particles = random_particles(m, dim, stream);
    const auto scores = random_particles(m, dim, stream);
    const double h = 0.9;

    // naive evaluation straight from the Stein-kernel formula:
    //   u(x_i, x_j) = k <s_i, s_j> + <s_i, grad_xj k> + <s_j, grad_xi k>
    //                 + trace(grad_xi grad_xj k)
    double total = 0.0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const auto k_ij = rbf_kernel(particles[i], particles[j], h); // grad is wrt x_j
            const auto k_ji = rbf_kernel(particles[j], particles[i], h); // grad is wrt x_i
            double term = k_ij.value * dot(scores[i], scores[j]);
            term += dot(scores[i], k_ij.grad_wrt_b);
            term += dot(scores[j], k_ji.grad_wrt_b);
            const double sq = squared_distance(particles[i], particles[j]);
            term += k_ij.value * (2.0 * dim / h - 4.0 * sq / (h * h));
            total += term;
        }
    const double naive = std::max(0.0, total / (m * m));
    REQUIRE_THAT(ksd_diagnostic(particles, scores, h),
                 Catch::Matchers::WithinAbs(naive, 1e-10));

    // identical copies give identical values
    REQUIRE(ksd_diagnostic(particles, scores, h) == ksd_diagnostic(particles, scores, h));
}

TEST_CASE("run_svgd approximates a 1-D Gaussian") {
    auto grad_fn = [](int, const std::vector<double>& theta, std::int64_t) {
        return gaussian_target_grad(theta, 3.0, 2.0);
    };
    RngStream init(353, 0);
    StepConfig step;
    step.epsilon = 0.05;
    const auto run = run_svgd([&](int) { return gaussian_draws(init, 1, 0.0, 1.0); }, 40, 1200,
                              grad_fn, KernelConfig{}, step, 10);
    double mean = 0.0, var = 0.0;
    for (const auto& p : run.ensemble.particles) mean += p[0];
    mean /= run.ensemble.size();
    for (const auto& p : run.ensemble.particles) var += (p[0] - mean) * (p[0] - mean);
    var /= run.ensemble.size();
    REQUIRE(std::abs(mean - 3.0) < 0.3);
    REQUIRE(std::abs(std::sqrt(var) - 2.0) < 0.4);
    REQUIRE(run.trace.back().ksd < run.trace.front().ksd);
}

TEST_CASE("run_svgd is reproducible for a fixed seed") {
    auto grad_fn = [](int, const std::vector<double>& theta, std::int64_t) {
        return gaussian_target_grad(theta, 0.0, 1.0);
    };
    auto make_run = [&] {
        RngStream init(359, 0);
        StepConfig step;
        step.epsilon = 0.05;
        return run_svgd([&](int) { return gaussian_draws(init, 1, 0.0, 1.0); }, 10, 100, grad_fn,
                        KernelConfig{}, step, 5, 2);
    };
    const auto a = make_run();
    const auto b = make_run();
    REQUIRE(a.ensemble.particles == b.ensemble.particles);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        REQUIRE(a.trace[i].log_posterior_mean == b.trace[i].log_posterior_mean);
        REQUIRE(a.trace[i].ksd == b.trace[i].ksd);
        REQUIRE(a.trace[i].bandwidth == b.trace[i].bandwidth);
    }
}

TEST_CASE("worker count does not change the result") {
    auto grad_fn = [](int, const std::vector<double>& theta, std::int64_t) {
        return gaussian_target_grad(theta, 1.0, 1.5);
    };
    auto make_run = [&](int workers) {
        RngStream init(367, 0);
        StepConfig step;
        step.epsilon = 0.05;
        return run_svgd([&](int) { return gaussian_draws(init, 1, 0.0, 1.0); }, 8, 60, grad_fn,
                        KernelConfig{}, step, 0, workers);
    };
    REQUIRE(make_run(1).ensemble.particles == make_run(4).ensemble.particles);
}
