#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "s2vgd/data.hpp"
#include "s2vgd/errors.hpp"
#include "s2vgd/network.hpp"
#include "s2vgd/rng.hpp"
#include "s2vgd/svgd.hpp"

namespace s2vgd {

// Contextual bandit environment. Reward draws are i.i.d. given (context,
// action); oracle_expected_reward exists for regret accounting only and is
// never shown to the agent.
struct BanditEnv {
    virtual ~BanditEnv() = default;
    virtual int context_dim() const = 0;
    virtual int n_actions() const = 0;
    virtual std::vector<double> sample_context(RngStream& stream) = 0;
    virtual double reward(const std::vector<double>& context, int action, RngStream& stream) = 0;
    virtual double oracle_expected_reward(const std::vector<double>& context,
                                          int action) const = 0;
};

// Mushroom environment: action 0 eats, action 1 skips. Eating an edible
// mushroom pays 5; eating a poisonous one pays -10 or 5 with probability 0.5
// each; skipping always pays 0.
class MushroomEnv : public BanditEnv {
public:
    static constexpr int kEat = 0;
    static constexpr int kSkip = 1;

    // Random binary feature table with a planted linear edibility rule.
    static MushroomEnv synthetic(int n_items, int feature_dim, RngStream& stream) {
        MushroomEnv env;
        std::vector<double> w(feature_dim);
        for (auto& x : w) x = stream.gaussian();
        double threshold = 0.0;
        for (double x : w) threshold += 0.5 * x; // rule centered on the feature mean
        for (int i = 0; i < n_items; ++i) {
            std::vector<double> f(feature_dim);
            double score = 0.0;
            for (int k = 0; k < feature_dim; ++k) {
                f[k] = stream.uniform01() < 0.5 ? 1.0 : 0.0;
                score += w[k] * f[k];
            }
            env.register_item(std::move(f), score > threshold);
        }
        return env;
    }

    // UCI-style table: one class column with labels e/p, every feature
    // column categorical.
    static MushroomEnv from_csv(const std::string& path) {
        std::ifstream probe(path);
        if (!probe) throw DataError("mushroom: cannot open '" + path + "'");
        std::string header_line;
        std::getline(probe, header_line);
        const std::size_t n_cols = detail::split_line(header_line).size();
        probe.close();

        CsvSchema schema;
        schema.header = false;
        schema.target_column = "0";
        schema.classification_target = true;
        for (std::size_t c = 1; c < n_cols; ++c)
            schema.categorical_columns.push_back(std::to_string(c));
        const Dataset ds = load_csv(path, schema);
        int edible_class = -1;
        for (std::size_t k = 0; k < ds.class_names.size(); ++k)
            if (ds.class_names[k] == "e") edible_class = static_cast<int>(k);
        if (edible_class < 0)
            throw DataError("mushroom: expected class labels 'e'/'p' in column 0");
        MushroomEnv env;
        for (std::size_t i = 0; i < ds.size(); ++i)
            env.register_item(ds.inputs[i], ds.cls_targets[i] == edible_class);
        return env;
    }

    int context_dim() const override { return features_.empty() ? 0 : static_cast<int>(features_[0].size()); }
    int n_actions() const override { return 2; }

    std::vector<double> sample_context(RngStream& stream) override {
        return features_[stream.uniform_below(features_.size())];
    }

    double reward(const std::vector<double>& context, int action, RngStream& stream) override {
        if (action == kSkip) return 0.0;
        if (action != kEat) throw ConfigError("mushroom: unknown action");
        if (is_edible(context)) return 5.0;
        return stream.uniform01() < 0.5 ? -10.0 : 5.0;
    }

    double oracle_expected_reward(const std::vector<double>& context, int action) const override {
        if (action == kSkip) return 0.0;
        return is_edible(context) ? 5.0 : -2.5;
    }

    std::size_t n_items() const { return features_.size(); }

    bool is_edible(const std::vector<double>& context) const {
        const auto it = edibility_.find(key_of(context));
        if (it == edibility_.end()) throw DataError("mushroom: unknown context row");
        return it->second;
    }

private:
    void register_item(std::vector<double> f, bool edible) {
        edibility_.emplace(key_of(f), edible); // duplicate rows keep the first label
        features_.push_back(std::move(f));
    }

    static std::string key_of(const std::vector<double>& f) {
        std::string k(f.size() * sizeof(double), '\0');
        std::memcpy(k.data(), f.data(), k.size());
        return k;
    }

    std::vector<std::vector<double>> features_;
    std::unordered_map<std::string, bool> edibility_;
};

struct BanditRecord {
    std::vector<double> context;
    int action = 0;
    double reward = 0.0;
};

// Ring buffer: append-only until capacity, then FIFO eviction.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

    void append(BanditRecord rec) {
        if (records_.size() < capacity_) {
            records_.push_back(std::move(rec));
        } else {
            records_[next_] = std::move(rec);
            next_ = (next_ + 1) % capacity_;
        }
    }

    std::size_t size() const { return records_.size(); }
    const BanditRecord& operator[](std::size_t i) const { return records_[i]; }

    std::vector<std::size_t> sample_indices(std::size_t batch, RngStream& stream) const {
        std::vector<std::size_t> idx(batch);
        for (auto& i : idx) i = stream.uniform_below(records_.size());
        return idx;
    }

private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<BanditRecord> records_;
};

// Log-posterior and gradient of the reward-head network on (context, chosen
// action, reward) records: Gaussian likelihood on the chosen action's output
// only, the other heads masked out of the loss.
inline GradResult bandit_posterior_grad(const NetworkSpec& spec, const ParamLayout& lo,
                                        const std::vector<double>& params,
                                        const ReplayBuffer& buffer,
                                        const std::vector<std::size_t>& batch_idx) {
    GradResult out;
    out.grad.assign(lo.total, 0.0);
    const double scale =
        static_cast<double>(buffer.size()) / static_cast<double>(batch_idx.size());
    const double log_gamma = params[lo.log_gamma_offset];
    const double inv_gamma = std::exp(-log_gamma);
    ForwardCache cache;
    std::vector<double> dL_df;
    double ll = 0.0;
    for (std::size_t i : batch_idx) {
        const auto& rec = buffer[i];
        const auto f = forward_cached(spec, lo, params, rec.context, cache);
        const double r = rec.reward - f[rec.action];
        ll += -0.5 * (kLog2Pi + log_gamma) - 0.5 * r * r * inv_gamma;
        dL_df.assign(f.size(), 0.0);
        dL_df[rec.action] = scale * r * inv_gamma;
        out.grad[lo.log_gamma_offset] += scale * (-0.5 + 0.5 * r * r * inv_gamma);
        backward_from_output(spec, lo, params, cache, dL_df, out.grad);
    }
    out.value = scale * ll + log_prior_grad(spec, lo, params, &out.grad);
    return out;
}

struct BanditUpdateConfig {
    int n_update = 8;      // SVGD iterations per environment step
    int batch_size = 64;   // minibatch drawn from the replay buffer
};

// Shared posterior refresh: n_update SVGD iterations on buffer minibatches.
// Batches are drawn on the control thread; per-particle gradients may run in
// parallel.
inline void bandit_refresh(Ensemble& ensemble, const ReplayBuffer& buffer,
                           const NetworkSpec& spec, const ParamLayout& lo,
                           const BanditUpdateConfig& cfg, const KernelConfig& kernel_cfg,
                           const StepConfig& step_cfg, RngStream& stream, int workers) {
    if (buffer.size() == 0) return;
    const int m = ensemble.size();
    std::vector<std::vector<double>> grads(m);
    for (int u = 0; u < cfg.n_update; ++u) {
        const auto idx = buffer.sample_indices(
            std::min<std::size_t>(cfg.batch_size, buffer.size()), stream);
        parallel_for(m, workers, [&](int i) {
            grads[i] = bandit_posterior_grad(spec, lo, ensemble.particles[i], buffer, idx).grad;
        });
        const double h = median_bandwidth(ensemble.particles, kernel_cfg);
        svgd_step(ensemble, svgd_direction(ensemble.particles, grads, h), step_cfg);
        for (int i = 0; i < m; ++i)
            reinit_collapsed_flow_vectors(lo, ensemble.particles[i], stream);
    }
}

inline int argmax_action(const std::vector<double>& values) {
    return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

struct BanditStepResult {
    int action = 0;
    double reward = 0.0;
    std::vector<double> context;
};

// One Thompson round: observe a context, draw one particle uniformly, act
// greedily under that particle's predicted rewards, record the outcome, then
// refresh the posterior.
inline BanditStepResult stein_thompson_step(Ensemble& ensemble, BanditEnv& env,
                                            ReplayBuffer& buffer, const NetworkSpec& spec,
                                            const ParamLayout& lo,
                                            const BanditUpdateConfig& cfg,
                                            const KernelConfig& kernel_cfg,
                                            const StepConfig& step_cfg, RngStream& stream,
                                            int workers = 1) {
    BanditStepResult out;
    out.context = env.sample_context(stream);
    const std::size_t pick = stream.uniform_below(ensemble.size());
    const auto predicted = forward(spec, lo, ensemble.particles[pick], out.context);
    out.action = argmax_action(predicted);
    out.reward = env.reward(out.context, out.action, stream);
    buffer.append({out.context, out.action, out.reward});
    bandit_refresh(ensemble, buffer, spec, lo, cfg, kernel_cfg, step_cfg, stream, workers);
    return out;
}

// Epsilon-greedy baseline on a point estimate (single particle, MAP
// reduction of the same update path). epsilon = 0 is pure greedy.
inline BanditStepResult epsilon_greedy_step(Ensemble& ensemble, BanditEnv& env,
                                            ReplayBuffer& buffer, const NetworkSpec& spec,
                                            const ParamLayout& lo, double epsilon,
                                            const BanditUpdateConfig& cfg,
                                            const StepConfig& step_cfg, RngStream& stream) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0))
        throw ConfigError("epsilon_greedy: epsilon must lie in [0, 1]");
    BanditStepResult out;
    out.context = env.sample_context(stream);
    const double u = stream.uniform01();
    if (u < epsilon) {
        out.action = static_cast<int>(stream.uniform_below(env.n_actions()));
    } else {
        out.action = argmax_action(forward(spec, lo, ensemble.particles[0], out.context));
    }
    out.reward = env.reward(out.context, out.action, stream);
    buffer.append({out.context, out.action, out.reward});
    KernelConfig kernel_cfg; // irrelevant at M=1
    bandit_refresh(ensemble, buffer, spec, lo, cfg, kernel_cfg, step_cfg, stream, 1);
    return out;
}

// R_t = sum_{tau<=t} [ max_a oracle(s_tau, a) - oracle(s_tau, a_tau) ].
inline std::vector<double> cumulative_regret(const std::vector<BanditRecord>& trace,
                                             const BanditEnv& env) {
    std::vector<double> out;
    out.reserve(trace.size());
    double total = 0.0;
    for (const auto& rec : trace) {
        double best = env.oracle_expected_reward(rec.context, 0);
        for (int a = 1; a < env.n_actions(); ++a)
            best = std::max(best, env.oracle_expected_reward(rec.context, a));
        total += best - env.oracle_expected_reward(rec.context, rec.action);
        out.push_back(total);
    }
    return out;
}

} // namespace s2vgd
