#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "s2vgd/checkpoint.hpp"
#include "s2vgd/data.hpp"
#include "s2vgd/errors.hpp"
#include "s2vgd/network.hpp"
#include "s2vgd/rng.hpp"
#include "s2vgd/svgd.hpp"

namespace s2vgd {

struct TrainConfig {
    std::vector<int> hidden = {50};
    int K = 1;
    int M = 20;
    double epsilon = 1e-3;
    double rmsprop_decay = 0.99;
    int batch = 100;
    int epochs = 500;
    std::uint64_t seed = 0;
    int workers = 1;
    double prior_variance_init = 1.0;
    HyperPrior hyper{1.0, 0.1};
    Activation activation = Activation::relu;
    int decay_every = 0;
    double decay_factor = 0.5;
    std::int64_t log_every = 10;
    double bandwidth_floor = 1e-6;
};

struct EpochMetrics {
    int epoch = 0;
    double train_log_posterior = 0.0;
    double test_rmse = 0.0;     // regression, original target units
    double test_loglik = 0.0;   // regression, mean per-point, original units
    double train_accuracy = 0.0; // classification
    double test_accuracy = 0.0;  // classification
};

struct TrainResult {
    NetworkSpec spec;
    ParamLayout layout;
    Ensemble ensemble;
    std::vector<EpochMetrics> metrics;
    std::vector<TraceRow> trace;
    Normalization norm;
};

// Architecture from a dataset: input width, hidden widths, output width
// (target dimension or class count). K is clamped per layer to its
// min(l1, l2) cap so one global setting works for every width.
inline NetworkSpec make_network_spec(const Dataset& train, const TrainConfig& cfg) {
    NetworkSpec spec;
    spec.layer_dims.push_back(train.input_dim());
    for (int h : cfg.hidden) spec.layer_dims.push_back(h);
    spec.layer_dims.push_back(train.classification
                                  ? train.n_classes
                                  : static_cast<int>(train.reg_targets[0].size()));
    for (int l = 0; l < spec.n_layers(); ++l)
        spec.K_per_layer.push_back(
            std::min(cfg.K, std::min(spec.layer_dims[l], spec.layer_dims[l + 1])));
    spec.activation = cfg.activation;
    spec.likelihood =
        train.classification ? Likelihood::categorical : Likelihood::gaussian_regression;
    spec.hyper = cfg.hyper;
    spec.prior_variance_init = cfg.prior_variance_init;
    spec.validate();
    return spec;
}

namespace detail {

inline Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& idx) {
    Batch b;
    b.n_total = static_cast<double>(ds.size());
    for (std::size_t i : idx) {
        b.inputs.push_back(ds.inputs[i]);
        if (ds.classification)
            b.cls_targets.push_back(ds.cls_targets[i]);
        else
            b.reg_targets.push_back(ds.reg_targets[i]);
    }
    return b;
}

inline Batch full_batch(const Dataset& ds) {
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    return make_batch(ds, idx);
}

// `count` distinct indices drawn by partial Fisher-Yates.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count,
                                                           RngStream stream) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < count; ++i)
        std::swap(idx[i], idx[i + stream.uniform_below(n - i)]);
    idx.resize(count);
    return idx;
}

} // namespace detail

// Mean per-point regression metrics in original target units. The test
// log-likelihood is the equal-weight particle mixture density.
inline void regression_metrics(const NetworkSpec& spec, const ParamLayout& lo,
                               const Ensemble& ensemble, const Dataset& test,
                               double& rmse_out, double& loglik_out) {
    const auto& norm = test.norm;
    const std::size_t m = ensemble.particles.size();
    double se = 0.0, ll = 0.0;
    double log_std_jacobian = 0.0;
    for (double s : norm.target_std) log_std_jacobian += std::log(s);
    std::vector<double> point_ll(m);
    for (std::size_t n = 0; n < test.size(); ++n) {
        const auto pred = predict_ensemble(spec, lo, ensemble.particles, test.inputs[n]);
        const auto y_hat = denormalize_target(norm, pred.mean);
        const auto y = denormalize_target(norm, test.reg_targets[n]);
        for (std::size_t k = 0; k < y.size(); ++k) {
            const double r = y[k] - y_hat[k];
            se += r * r;
        }
        for (std::size_t i = 0; i < m; ++i) {
            const auto f = forward(spec, lo, ensemble.particles[i], test.inputs[n]);
            const double log_gamma = ensemble.particles[i][lo.log_gamma_offset];
            point_ll[i] = point_log_likelihood(spec, f, &test.reg_targets[n], -1, log_gamma);
        }
        ll += log_sum_exp(point_ll) - std::log(static_cast<double>(m)) - log_std_jacobian;
    }
    const double n_obs = static_cast<double>(test.size() * test.reg_targets[0].size());
    rmse_out = std::sqrt(se / n_obs);
    loglik_out = ll / static_cast<double>(test.size());
}

inline double classification_accuracy(const NetworkSpec& spec, const ParamLayout& lo,
                                      const Ensemble& ensemble, const Dataset& ds) {
    std::size_t hits = 0;
    for (std::size_t n = 0; n < ds.size(); ++n) {
        const auto pred = predict_ensemble(spec, lo, ensemble.particles, ds.inputs[n]);
        const int top = static_cast<int>(
            std::max_element(pred.probs.begin(), pred.probs.end()) - pred.probs.begin());
        hits += top == ds.cls_targets[n];
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

// SVGD training over a (train, test) pair: per-iteration minibatches shared
// across particles, per-epoch metric evaluation, NaN guard each epoch.
inline TrainResult train_network(const Dataset& train, const Dataset& test,
                                 const TrainConfig& cfg) {
    if (train.size() == 0) throw DataError("train: empty training set");
    TrainResult result;
    result.spec = make_network_spec(train, cfg);
    result.layout = make_layout(result.spec);
    result.norm = train.norm;

    const RngStream master(cfg.seed, 0);
    const std::size_t batch_size = std::min<std::size_t>(cfg.batch, train.size());
    const int iters_per_epoch =
        static_cast<int>((train.size() + batch_size - 1) / batch_size);
    const std::int64_t n_iters = static_cast<std::int64_t>(cfg.epochs) * iters_per_epoch;
    const bool full = batch_size == train.size();
    const Batch whole = detail::full_batch(train);

    KernelConfig kernel_cfg;
    kernel_cfg.bandwidth_floor = cfg.bandwidth_floor;
    StepConfig step_cfg;
    step_cfg.epsilon = cfg.epsilon;
    step_cfg.rmsprop_decay = cfg.rmsprop_decay;
    step_cfg.decay_every = cfg.decay_every;
    step_cfg.decay_factor = cfg.decay_factor;
    step_cfg.steps_per_epoch = iters_per_epoch;

    Batch current = whole;
    const RngStream batch_root = master.substream(1);
    auto pre_iter = [&](std::int64_t iter) {
        if (!full)
            current = detail::make_batch(
                train, detail::sample_without_replacement(train.size(), batch_size,
                                                          batch_root.substream(iter)));
    };
    auto grad_fn = [&](int, const std::vector<double>& theta, std::int64_t) {
        return log_posterior_grad(result.spec, result.layout, theta, current);
    };
    const RngStream recovery_root = master.substream(2);
    auto post_iter = [&](std::int64_t iter, Ensemble& ensemble) {
        const RngStream recovery = recovery_root.substream(static_cast<std::uint64_t>(iter));
        for (std::size_t i = 0; i < ensemble.particles.size(); ++i) {
            RngStream s = recovery.substream(i);
            reinit_collapsed_flow_vectors(result.layout, ensemble.particles[i], s);
        }
        if (iter % iters_per_epoch != 0) return;
        const int epoch = static_cast<int>(iter / iters_per_epoch);
        EpochMetrics em;
        em.epoch = epoch;
        double lp = 0.0;
        for (const auto& p : ensemble.particles) {
            if (!all_finite(p)) throw NumericError("train: particle diverged (NaN/Inf)");
            lp += log_likelihood(result.spec, result.layout, p, whole) +
                  log_prior(result.spec, result.layout, p);
        }
        em.train_log_posterior = lp / static_cast<double>(ensemble.particles.size());
        if (train.classification) {
            em.train_accuracy = classification_accuracy(result.spec, result.layout, ensemble, train);
            em.test_accuracy = classification_accuracy(result.spec, result.layout, ensemble, test);
        } else {
            regression_metrics(result.spec, result.layout, ensemble, test, em.test_rmse,
                               em.test_loglik);
        }
        result.metrics.push_back(em);
    };

    auto run = run_svgd(
        [&](int i) {
            RngStream s = master.substream(0x1000 + static_cast<std::uint64_t>(i));
            return init_particle(result.spec, result.layout, s);
        },
        cfg.M, n_iters, grad_fn, kernel_cfg, step_cfg, cfg.log_every, cfg.workers, pre_iter,
        post_iter);
    result.ensemble = std::move(run.ensemble);
    result.trace = std::move(run.trace);
    return result;
}

} // namespace s2vgd
