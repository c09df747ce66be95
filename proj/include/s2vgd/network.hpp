#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "s2vgd/errors.hpp"
#include "s2vgd/layer.hpp"
#include "s2vgd/rng.hpp"

namespace s2vgd {

enum class Activation { relu, tanh };
enum class Likelihood { gaussian_regression, categorical };

struct NetworkSpec {
    std::vector<int> layer_dims; // input, hidden..., output
    std::vector<int> K_per_layer;
    Activation activation = Activation::relu;
    Likelihood likelihood = Likelihood::gaussian_regression;
    HyperPrior hyper;
    double prior_variance_init = 1.0;

    int n_layers() const { return static_cast<int>(layer_dims.size()) - 1; }

    void validate() const {
        if (layer_dims.size() < 2) throw ConfigError("network: need at least one layer");
        for (int d : layer_dims)
            if (d <= 0) throw ConfigError("network: layer widths must be positive");
        if (K_per_layer.size() != layer_dims.size() - 1)
            throw ConfigError("network: K_per_layer length must equal layer count");
        for (int l = 0; l < n_layers(); ++l) {
            const int cap = std::min(layer_dims[l], layer_dims[l + 1]);
            if (K_per_layer[l] < 0 || K_per_layer[l] > cap)
                throw ConfigError("network: K must lie in [0, min(l1, l2)] at layer " +
                                  std::to_string(l));
        }
        if (!(prior_variance_init > 0.0))
            throw ConfigError("network: prior_variance_init must be positive");
    }
};

// Segment map of a flat particle: one LayerLayout per layer, then an
// optional trailing log-observation-noise scalar for regression.
struct ParamLayout {
    std::vector<LayerLayout> layers;
    int total = 0;
    bool has_log_gamma = false;
    int log_gamma_offset = -1;
};

inline ParamLayout make_layout(const NetworkSpec& spec) {
    spec.validate();
    ParamLayout lo;
    int off = 0;
    for (int l = 0; l < spec.n_layers(); ++l) {
        LayerLayout ll;
        ll.shape = {spec.layer_dims[l], spec.layer_dims[l + 1], spec.K_per_layer[l]};
        ll.offset = off;
        off += ll.size();
        lo.layers.push_back(ll);
    }
    if (spec.likelihood == Likelihood::gaussian_regression) {
        lo.has_log_gamma = true;
        lo.log_gamma_offset = off;
        off += 1;
    }
    lo.total = off;
    return lo;
}

// Householder vectors are scale-free in the likelihood, so the prior can
// walk one arbitrarily close to zero norm (a near-certainty for the
// dimension-1 banks of width-1 layers). Any vector whose squared norm sits
// below `threshold` is redrawn standard normal, which re-picks the gauge
// without touching the represented function for dimension-1 banks. Returns
// the number of redraws. Call on the control thread after each step.
inline int reinit_collapsed_flow_vectors(const ParamLayout& lo, std::vector<double>& particle,
                                         RngStream& stream, double threshold = 1e-8) {
    int redrawn = 0;
    for (const auto& ll : lo.layers) {
        auto fix_bank = [&](int off, int dim) {
            for (int k = 0; k < ll.shape.K; ++k) {
                double* v = particle.data() + off + static_cast<std::size_t>(k) * dim;
                double n2 = 0.0;
                for (int i = 0; i < dim; ++i) n2 += v[i] * v[i];
                if (n2 >= threshold) continue;
                do {
                    n2 = 0.0;
                    for (int i = 0; i < dim; ++i) {
                        v[i] = stream.gaussian();
                        n2 += v[i] * v[i];
                    }
                } while (n2 < threshold);
                ++redrawn;
            }
        };
        fix_bank(ll.p_off(), ll.shape.l1);
        fix_bank(ll.q_off(), ll.shape.l2);
    }
    return redrawn;
}

// Core weights start small to keep early ReLU nets non-degenerate; the
// diagonals start at one so the layer initially acts like a plain linear
// map; Householder vectors are standard normal; scales start at the
// configured prior variance.
inline std::vector<double> init_particle(const NetworkSpec& spec, const ParamLayout& lo,
                                         RngStream& stream) {
    std::vector<double> p(lo.total, 0.0);
    const double log_var0 = std::log(spec.prior_variance_init);
    for (const auto& ll : lo.layers) {
        const int l1 = ll.shape.l1, l2 = ll.shape.l2, K = ll.shape.K;
        for (int i = 0; i < l1 * l2; ++i) p[ll.c_off() + i] = stream.gaussian(0.0, 0.05);
        for (int i = 0; i < l1; ++i) p[ll.d1_off() + i] = 1.0;
        for (int i = 0; i < l2; ++i) p[ll.d2_off() + i] = 1.0;
        for (int i = 0; i < K * l1; ++i) p[ll.p_off() + i] = stream.gaussian();
        for (int i = 0; i < K * l2; ++i) p[ll.q_off() + i] = stream.gaussian();
        // bias stays zero
        p[ll.scales_off() + 0] = log_var0;
        p[ll.scales_off() + 1] = log_var0;
        p[ll.scales_off() + 2] = log_var0;
    }
    if (lo.has_log_gamma) p[lo.log_gamma_offset] = log_var0;
    reinit_collapsed_flow_vectors(lo, p, stream); // guard degenerate initial draws
    return p;
}

// Minibatch with the dataset size carried along for likelihood rescaling.
struct Batch {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> reg_targets; // regression
    std::vector<int> cls_targets;                 // classification
    double n_total = 0.0;

    std::size_t size() const { return inputs.size(); }
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    std::vector<std::vector<double>> inputs;  // input seen by each layer
    std::vector<std::vector<double>> preacts; // pre-activation output of each layer
    LayerCache scratch;
};

inline double activate(Activation a, double x) {
    return a == Activation::relu ? (x > 0.0 ? x : 0.0) : std::tanh(x);
}

inline double activate_grad(Activation a, double pre) {
    if (a == Activation::relu) return pre > 0.0 ? 1.0 : 0.0; // subgradient 0 at 0
    const double t = std::tanh(pre);
    return 1.0 - t * t;
}

// Network output f(x): hidden layers pass through the activation, the final
// layer is linear (softmax, when any, lives in the likelihood).
inline std::vector<double> forward_cached(const NetworkSpec& spec, const ParamLayout& lo,
                                          const std::vector<double>& params,
                                          const std::vector<double>& x, ForwardCache& cache) {
    const int L = spec.n_layers();
    if (static_cast<int>(x.size()) != spec.layer_dims[0])
        throw DimensionError("forward: input length != first layer width");
    cache.layers.resize(L);
    cache.inputs.resize(L);
    cache.preacts.resize(L);
    cache.inputs[0] = x;
    for (int l = 0; l < L; ++l) {
        const LayerView v = layer_view(lo.layers[l], params.data());
        cache.preacts[l].resize(lo.layers[l].shape.l2);
        layer_forward(v, cache.inputs[l].data(), cache.preacts[l].data(), cache.layers[l]);
        if (l + 1 < L) {
            cache.inputs[l + 1].resize(cache.preacts[l].size());
            for (std::size_t i = 0; i < cache.preacts[l].size(); ++i)
                cache.inputs[l + 1][i] = activate(spec.activation, cache.preacts[l][i]);
        }
    }
    return cache.preacts[L - 1];
}

inline std::vector<double> forward(const NetworkSpec& spec, const ParamLayout& lo,
                                   const std::vector<double>& params,
                                   const std::vector<double>& x) {
    ForwardCache cache;
    return forward_cached(spec, lo, params, x, cache);
}

// Accumulates d(dL_df . f)/d params into grad, reusing the caches of the
// forward pass that produced f.
inline void backward_from_output(const NetworkSpec& spec, const ParamLayout& lo,
                                 const std::vector<double>& params, ForwardCache& cache,
                                 const std::vector<double>& dL_df, std::vector<double>& grad) {
    const int L = spec.n_layers();
    std::vector<double> g = dL_df;
    std::vector<double> gx;
    for (int l = L - 1; l >= 0; --l) {
        const LayerView v = layer_view(lo.layers[l], params.data());
        LayerGrad gv = layer_grad(lo.layers[l], grad.data());
        gx.resize(lo.layers[l].shape.l1);
        layer_backward(v, cache.inputs[l].data(), cache.layers[l], g.data(), gv,
                       l > 0 ? gx.data() : nullptr, cache.scratch);
        if (l > 0) {
            g.resize(gx.size());
            for (std::size_t i = 0; i < gx.size(); ++i)
                g[i] = gx[i] * activate_grad(spec.activation, cache.preacts[l - 1][i]);
        }
    }
}

inline double log_sum_exp(const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
    const double lse = log_sum_exp(logits);
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
    return p;
}

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Log-likelihood of one point given the network output.
inline double point_log_likelihood(const NetworkSpec& spec, const std::vector<double>& f,
                                   const std::vector<double>* reg_target, int cls_target,
                                   double log_gamma) {
    if (spec.likelihood == Likelihood::gaussian_regression) {
        const auto& y = *reg_target;
        if (y.size() != f.size()) throw DimensionError("likelihood: target length != output");
        const double inv_gamma = std::exp(-log_gamma);
        double ll = 0.0;
        for (std::size_t k = 0; k < f.size(); ++k) {
            const double r = y[k] - f[k];
            ll += -0.5 * (kLog2Pi + log_gamma) - 0.5 * r * r * inv_gamma;
        }
        return ll;
    }
    if (cls_target < 0 || cls_target >= static_cast<int>(f.size()))
        throw DataError("likelihood: class index out of range");
    return f[cls_target] - log_sum_exp(f);
}

inline double log_likelihood(const NetworkSpec& spec, const ParamLayout& lo,
                             const std::vector<double>& params, const Batch& batch) {
    const double log_gamma = lo.has_log_gamma ? params[lo.log_gamma_offset] : 0.0;
    double ll = 0.0;
    ForwardCache cache;
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const auto f = forward_cached(spec, lo, params, batch.inputs[n], cache);
        ll += point_log_likelihood(spec, f,
                                   batch.reg_targets.empty() ? nullptr : &batch.reg_targets[n],
                                   batch.cls_targets.empty() ? -1 : batch.cls_targets[n],
                                   log_gamma);
    }
    return ll;
}

// Log prior over the whole particle, gradient accumulated when grad != null.
inline double log_prior_grad(const NetworkSpec& spec, const ParamLayout& lo,
                             const std::vector<double>& params, std::vector<double>* grad) {
    double lp = 0.0;
    for (const auto& ll : lo.layers) {
        const LayerView v = layer_view(ll, params.data());
        if (grad) {
            LayerGrad g = layer_grad(ll, grad->data());
            lp += layer_log_prior_grad(v, spec.hyper, g);
        } else {
            lp += layer_log_prior(v, spec.hyper);
        }
    }
    if (lo.has_log_gamma) {
        const double u = params[lo.log_gamma_offset];
        lp += detail::inv_gamma_log_density_logspace(u, spec.hyper.a, spec.hyper.b);
        if (grad) (*grad)[lo.log_gamma_offset] += -spec.hyper.a + spec.hyper.b * std::exp(-u);
    }
    return lp;
}

inline double log_prior(const NetworkSpec& spec, const ParamLayout& lo,
                        const std::vector<double>& params) {
    return log_prior_grad(spec, lo, params, nullptr);
}

struct GradResult {
    double value = 0.0;
    std::vector<double> grad;
};

// Stochastic log-posterior estimate and its exact gradient:
//   (n_total/|batch|) * log_likelihood(batch) + log_prior.
// The rescaling touches the likelihood only.
inline GradResult log_posterior_grad(const NetworkSpec& spec, const ParamLayout& lo,
                                     const std::vector<double>& params, const Batch& batch) {
    if (batch.size() == 0) throw DimensionError("log_posterior_grad: empty batch");
    GradResult out;
    out.grad.assign(lo.total, 0.0);
    const double scale = batch.n_total / static_cast<double>(batch.size());
    const double log_gamma = lo.has_log_gamma ? params[lo.log_gamma_offset] : 0.0;
    const double inv_gamma = std::exp(-log_gamma);

    ForwardCache cache;
    std::vector<double> dL_df;
    double ll = 0.0;
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const auto f = forward_cached(spec, lo, params, batch.inputs[n], cache);
        dL_df.assign(f.size(), 0.0);
        if (spec.likelihood == Likelihood::gaussian_regression) {
            const auto& y = batch.reg_targets[n];
            if (y.size() != f.size())
                throw DimensionError("log_posterior_grad: target length != output");
            double lg_grad = 0.0;
            for (std::size_t k = 0; k < f.size(); ++k) {
                const double r = y[k] - f[k];
                ll += -0.5 * (kLog2Pi + log_gamma) - 0.5 * r * r * inv_gamma;
                dL_df[k] = scale * r * inv_gamma;
                lg_grad += -0.5 + 0.5 * r * r * inv_gamma;
            }
            out.grad[lo.log_gamma_offset] += scale * lg_grad;
        } else {
            const int c = batch.cls_targets[n];
            if (c < 0 || c >= static_cast<int>(f.size()))
                throw DataError("log_posterior_grad: class index out of range");
            const auto p = softmax(f);
            ll += f[c] - log_sum_exp(f);
            for (std::size_t k = 0; k < f.size(); ++k)
                dL_df[k] = scale * ((static_cast<int>(k) == c ? 1.0 : 0.0) - p[k]);
        }
        backward_from_output(spec, lo, params, cache, dL_df, out.grad);
    }
    out.value = scale * ll + log_prior_grad(spec, lo, params, &out.grad);
    return out;
}

// Ensemble prediction summary. Regression: particle mean, between-particle
// (epistemic) std and total predictive std per output; classification:
// averaged class probabilities.
struct PredictionSummary {
    std::vector<double> mean;
    std::vector<double> epistemic_std;
    std::vector<double> total_std;
    std::vector<double> probs;
};

inline PredictionSummary predict_ensemble(const NetworkSpec& spec, const ParamLayout& lo,
                                          const std::vector<std::vector<double>>& particles,
                                          const std::vector<double>& x) {
    if (particles.empty()) throw DimensionError("predict_ensemble: empty ensemble");
    const std::size_t m = particles.size();
    PredictionSummary out;
    if (spec.likelihood == Likelihood::categorical) {
        std::vector<double> acc;
        for (const auto& p : particles) {
            const auto probs = softmax(forward(spec, lo, p, x));
            if (acc.empty()) acc.assign(probs.size(), 0.0);
            for (std::size_t k = 0; k < probs.size(); ++k) acc[k] += probs[k];
        }
        for (auto& a : acc) a /= static_cast<double>(m);
        out.probs = std::move(acc);
        return out;
    }
    std::vector<double> sum, sum_sq;
    double gamma_mean = 0.0;
    for (const auto& p : particles) {
        const auto f = forward(spec, lo, p, x);
        if (sum.empty()) {
            sum.assign(f.size(), 0.0);
            sum_sq.assign(f.size(), 0.0);
        }
        for (std::size_t k = 0; k < f.size(); ++k) {
            sum[k] += f[k];
            sum_sq[k] += f[k] * f[k];
        }
        gamma_mean += std::exp(p[lo.log_gamma_offset]);
    }
    gamma_mean /= static_cast<double>(m);
    out.mean.resize(sum.size());
    out.epistemic_std.resize(sum.size());
    out.total_std.resize(sum.size());
    for (std::size_t k = 0; k < sum.size(); ++k) {
        const double mu = sum[k] / static_cast<double>(m);
        const double var = std::max(0.0, sum_sq[k] / static_cast<double>(m) - mu * mu);
        out.mean[k] = mu;
        out.epistemic_std[k] = std::sqrt(var);
        out.total_std[k] = std::sqrt(var + gamma_mean);
    }
    return out;
}

} // namespace s2vgd
