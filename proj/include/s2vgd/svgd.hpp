#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "s2vgd/errors.hpp"
#include "s2vgd/matrix.hpp"
#include "s2vgd/network.hpp"
#include "s2vgd/rng.hpp"

namespace s2vgd {

// Runs fn(0..n-1) across up to `workers` threads. Each index is processed
// exactly once and writes only its own slot, so results are identical for
// any worker count.
template <typename Fn>
inline void parallel_for(int n, int workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto body = [&] {
        try {
            for (int i; (i = next.fetch_add(1)) < n;) fn(i);
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mu);
            if (!error) error = std::current_exception();
            next.store(n);
        }
    };
    std::vector<std::thread> pool;
    const int t = std::min(workers, n);
    pool.reserve(t - 1);
    for (int k = 0; k < t - 1; ++k) pool.emplace_back(body);
    body();
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

// M particles with per-particle RMSProp accumulators.
struct Ensemble {
    std::vector<std::vector<double>> particles;
    std::vector<std::vector<double>> opt_state;
    std::int64_t step_count = 0;

    int size() const { return static_cast<int>(particles.size()); }
    int dim() const { return particles.empty() ? 0 : static_cast<int>(particles[0].size()); }

    static Ensemble of(std::vector<std::vector<double>> particles_) {
        Ensemble e;
        e.opt_state.assign(particles_.size(),
                           std::vector<double>(particles_.empty() ? 0 : particles_[0].size(), 0.0));
        e.particles = std::move(particles_);
        return e;
    }
};

struct KernelConfig {
    enum class Mode { median_heuristic, fixed };
    Mode mode = Mode::median_heuristic;
    double fixed_h = 1.0;
    double bandwidth_floor = 1e-6;
};

struct StepConfig {
    double epsilon = 1e-3;
    double rmsprop_decay = 0.99;
    double rmsprop_eps = 1e-8;
    int decay_every = 0;        // in epochs; 0 disables the block decay
    double decay_factor = 0.5;  // applied once per decay_every epochs
    int steps_per_epoch = 1;
};

struct RbfEval {
    double value = 0.0;
    std::vector<double> grad_wrt_b;
};

// kappa(a, b) = exp(-|a-b|^2 / h) and its gradient in the second argument.
inline RbfEval rbf_kernel(const std::vector<double>& a, const std::vector<double>& b, double h) {
    if (a.size() != b.size()) throw DimensionError("rbf_kernel: length mismatch");
    RbfEval out;
    out.value = std::exp(-squared_distance(a, b) / h);
    out.grad_wrt_b.resize(a.size());
    for (std::size_t d = 0; d < a.size(); ++d)
        out.grad_wrt_b[d] = (2.0 / h) * (a[d] - b[d]) * out.value;
    return out;
}

// h = med^2 / log M (natural log), guarded: a lone particle or a fully
// collapsed ensemble falls back to h = 1.
inline double median_bandwidth(const std::vector<std::vector<double>>& particles,
                               const KernelConfig& cfg) {
    if (cfg.mode == KernelConfig::Mode::fixed) return cfg.fixed_h;
    const std::size_t m = particles.size();
    if (m <= 1) return 1.0;
    const double med = median_pairwise_distance(particles);
    if (med == 0.0) return 1.0;
    const double h = med * med / std::log(static_cast<double>(m));
    return std::max(h, cfg.bandwidth_floor);
}

// phi_hat(theta_i) = (1/M) sum_j [ kappa(theta_j, theta_i) grads[j]
//                                  + grad_{theta_j} kappa(theta_j, theta_i) ].
// At M=1 this is exactly grads[0]: kappa(x,x)=1 and the repulsion term is
// identically zero, so single-particle runs reduce to MAP ascent bit for bit.
inline std::vector<std::vector<double>> svgd_direction(
    const std::vector<std::vector<double>>& particles,
    const std::vector<std::vector<double>>& grads, double h) {
    const int m = static_cast<int>(particles.size());
    if (static_cast<int>(grads.size()) != m)
        throw DimensionError("svgd_direction: grads count != particle count");
    const std::size_t dim = particles.empty() ? 0 : particles[0].size();
    for (const auto& g : grads)
        if (g.size() != dim) throw DimensionError("svgd_direction: layout mismatch");

    std::vector<std::vector<double>> dirs(m, std::vector<double>(dim, 0.0));
    for (int i = 0; i < m; ++i) {
        auto& di = dirs[i];
        for (int j = 0; j < m; ++j) {
            const double k = std::exp(-squared_distance(particles[j], particles[i]) / h);
            const double rep = 2.0 / h * k;
            for (std::size_t d = 0; d < dim; ++d)
                di[d] += k * grads[j][d] + rep * (particles[i][d] - particles[j][d]);
        }
        for (std::size_t d = 0; d < dim; ++d) di[d] /= static_cast<double>(m);
    }
    return dirs;
}

inline double effective_epsilon(const StepConfig& cfg, std::int64_t step_count) {
    if (cfg.decay_every <= 0) return cfg.epsilon;
    const std::int64_t period =
        static_cast<std::int64_t>(cfg.decay_every) * std::max(1, cfg.steps_per_epoch);
    return cfg.epsilon * std::pow(cfg.decay_factor, static_cast<double>(step_count / period));
}

// Per-coordinate RMSProp on the transport direction:
//   s <- rho s + (1-rho) phi^2;  theta <- theta + eps phi / (sqrt(s) + delta).
inline void svgd_step(Ensemble& e, const std::vector<std::vector<double>>& directions,
                      const StepConfig& cfg) {
    const double eps = effective_epsilon(cfg, e.step_count);
    for (int i = 0; i < e.size(); ++i) {
        auto& theta = e.particles[i];
        auto& s = e.opt_state[i];
        const auto& phi = directions[i];
        for (std::size_t d = 0; d < theta.size(); ++d) {
            s[d] = cfg.rmsprop_decay * s[d] + (1.0 - cfg.rmsprop_decay) * phi[d] * phi[d];
            theta[d] += eps * phi[d] / (std::sqrt(s[d]) + cfg.rmsprop_eps);
        }
    }
    ++e.step_count;
}

// Empirical V-statistic of the kernelized Stein discrepancy under the same
// RBF kernel, given the score of every particle. Diagnostic only; tiny
// negative values from rounding are clamped at zero.
inline double ksd_diagnostic(const std::vector<std::vector<double>>& particles,
                             const std::vector<std::vector<double>>& scores, double h) {
    const int m = static_cast<int>(particles.size());
    if (m < 2) throw DimensionError("ksd_diagnostic: need at least two particles");
    if (static_cast<int>(scores.size()) != m)
        throw DimensionError("ksd_diagnostic: scores count != particle count");
    const std::size_t dim = particles[0].size();
    double total = 0.0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            double sq = 0.0, si_sj = 0.0, si_diff = 0.0, sj_diff = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = particles[i][d] - particles[j][d];
                sq += diff * diff;
                si_sj += scores[i][d] * scores[j][d];
                si_diff += scores[i][d] * diff;
                sj_diff += scores[j][d] * diff;
            }
            const double k = std::exp(-sq / h);
            // s_i.s_j k + s_i.grad_j k + grad_i k.s_j + trace(grad_i grad_j k)
            const double u = k * si_sj + (2.0 / h) * k * (si_diff - sj_diff) +
                             k * (2.0 * static_cast<double>(dim) / h - 4.0 * sq / (h * h));
            total += u;
        }
    return std::max(0.0, total / (static_cast<double>(m) * static_cast<double>(m)));
}

struct TraceRow {
    std::int64_t iter = 0;
    double log_posterior_mean = 0.0;
    double ksd = 0.0;
    double bandwidth = 0.0;
    double epsilon = 0.0;
};

struct SvgdRun {
    Ensemble ensemble;
    std::vector<TraceRow> trace;
};

using ParticleInitFn = std::function<std::vector<double>(int particle)>;
using ParticleGradFn =
    std::function<GradResult(int particle, const std::vector<double>& theta, std::int64_t iter)>;
// Control-thread hooks around each iteration: pre runs before the parallel
// gradient phase (e.g. to draw the shared minibatch), post runs after the
// step and may adjust the ensemble (metric evaluation, collapsed-vector
// recovery).
using PreIterFn = std::function<void(std::int64_t iter)>;
using PostIterFn = std::function<void(std::int64_t iter, Ensemble&)>;

// Full transport driver: init M particles, then iterate grads (parallel over
// particles) -> bandwidth -> direction -> step, recording the trace every
// log_every iterations.
inline SvgdRun run_svgd(const ParticleInitFn& init, int m, std::int64_t n_iters,
                        const ParticleGradFn& grad_fn, const KernelConfig& kernel_cfg,
                        const StepConfig& step_cfg, std::int64_t log_every = 10,
                        int workers = 1, const PreIterFn& pre_iter = {},
                        const PostIterFn& post_iter = {}) {
    if (m < 1) throw ConfigError("run_svgd: need at least one particle");
    std::vector<std::vector<double>> particles(m);
    for (int i = 0; i < m; ++i) particles[i] = init(i);
    SvgdRun run;
    run.ensemble = Ensemble::of(std::move(particles));

    std::vector<GradResult> grads(m);
    for (std::int64_t iter = 1; iter <= n_iters; ++iter) {
        if (pre_iter) pre_iter(iter);
        parallel_for(m, workers, [&](int i) {
            grads[i] = grad_fn(i, run.ensemble.particles[i], iter);
        });
        const double h = median_bandwidth(run.ensemble.particles, kernel_cfg);
        std::vector<std::vector<double>> gvecs(m);
        for (int i = 0; i < m; ++i) gvecs[i] = std::move(grads[i].grad);
        const auto dirs = svgd_direction(run.ensemble.particles, gvecs, h);
        if (log_every > 0 && (iter % log_every == 0 || iter == n_iters)) {
            TraceRow row;
            row.iter = iter;
            double v = 0.0;
            for (int i = 0; i < m; ++i) v += grads[i].value;
            row.log_posterior_mean = v / m;
            row.ksd = m >= 2 ? ksd_diagnostic(run.ensemble.particles, gvecs, h) : 0.0;
            row.bandwidth = h;
            row.epsilon = effective_epsilon(step_cfg, run.ensemble.step_count);
            run.trace.push_back(row);
        }
        svgd_step(run.ensemble, dirs, step_cfg);
        if (post_iter) post_iter(iter, run.ensemble);
    }
    return run;
}

} // namespace s2vgd
