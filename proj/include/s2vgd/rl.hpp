#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "s2vgd/errors.hpp"
#include "s2vgd/network.hpp"
#include "s2vgd/rng.hpp"
#include "s2vgd/svgd.hpp"

namespace s2vgd {

// Episodic MDP with discrete actions. Transitions are deterministic given
// (state, action) for the built-in environment; only reset draws randomness.
struct EpisodicEnv {
    struct StepOut {
        std::vector<double> next_state;
        double reward = 0.0;
        bool done = false;
    };

    virtual ~EpisodicEnv() = default;
    virtual int state_dim() const = 0;
    virtual int n_actions() const = 0;
    virtual int horizon() const = 0;
    virtual std::vector<double> reset(RngStream& stream) = 0;
    virtual StepOut step(const std::vector<double>& state, int action, RngStream& stream) = 0;
};

// Classic cart-pole balancing, Euler-integrated. State (x, x_dot, theta,
// theta_dot); action 0 pushes left, 1 pushes right; reward 1 per step; an
// episode ends when |theta| > 12 degrees, |x| > 2.4 or the horizon is hit.
class CartPoleEnv : public EpisodicEnv {
public:
    static constexpr double kGravity = 9.8;
    static constexpr double kMassCart = 1.0;
    static constexpr double kMassPole = 0.1;
    static constexpr double kHalfLength = 0.5;
    static constexpr double kForceMag = 10.0;
    static constexpr double kDt = 0.02;
    static constexpr double kAngleLimit = 12.0 * 3.14159265358979323846 / 180.0;
    static constexpr double kPositionLimit = 2.4;
    static constexpr int kHorizon = 200;

    int state_dim() const override { return 4; }
    int n_actions() const override { return 2; }
    int horizon() const override { return kHorizon; }

    std::vector<double> reset(RngStream& stream) override {
        std::vector<double> s(4);
        for (auto& x : s) x = stream.uniform(-0.05, 0.05);
        return s;
    }

    StepOut step(const std::vector<double>& state, int action, RngStream&) override {
        if (action != 0 && action != 1) throw ConfigError("cartpole: action must be 0 or 1");
        const double x = state[0], x_dot = state[1], theta = state[2], theta_dot = state[3];
        const double force = action == 1 ? kForceMag : -kForceMag;
        const double total_mass = kMassCart + kMassPole;
        const double pole_mass_length = kMassPole * kHalfLength;
        const double cos_t = std::cos(theta), sin_t = std::sin(theta);
        const double temp =
            (force + pole_mass_length * theta_dot * theta_dot * sin_t) / total_mass;
        const double theta_acc =
            (kGravity * sin_t - cos_t * temp) /
            (kHalfLength * (4.0 / 3.0 - kMassPole * cos_t * cos_t / total_mass));
        const double x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass;
        StepOut out;
        out.next_state = {x + kDt * x_dot, x_dot + kDt * x_acc, theta + kDt * theta_dot,
                          theta_dot + kDt * theta_acc};
        out.reward = 1.0;
        out.done = std::abs(out.next_state[0]) > kPositionLimit ||
                   std::abs(out.next_state[2]) > kAngleLimit;
        return out;
    }
};

struct Trajectory {
    std::vector<std::vector<double>> states;
    std::vector<int> actions;
    std::vector<double> rewards;
    std::vector<double> returns; // discounted-to-go

    double undiscounted_return() const {
        double s = 0.0;
        for (double r : rewards) s += r;
        return s;
    }
};

inline int sample_categorical(const std::vector<double>& probs, RngStream& stream) {
    const double u = stream.uniform01();
    double acc = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        acc += probs[k];
        if (u < acc) return static_cast<int>(k);
    }
    return static_cast<int>(probs.size()) - 1;
}

// Roll out n_episodes under the softmax policy of one particle; returns are
// filled by backward recursion returns[t] = rewards[t] + gamma returns[t+1].
inline std::vector<Trajectory> collect_trajectories(const NetworkSpec& spec,
                                                    const ParamLayout& lo,
                                                    const std::vector<double>& particle,
                                                    EpisodicEnv& env, int n_episodes,
                                                    double gamma_disc, RngStream& stream) {
    std::vector<Trajectory> out;
    out.reserve(n_episodes);
    ForwardCache cache;
    for (int e = 0; e < n_episodes; ++e) {
        Trajectory traj;
        auto state = env.reset(stream);
        for (int t = 0; t < env.horizon(); ++t) {
            const auto logits = forward_cached(spec, lo, particle, state, cache);
            const int action = sample_categorical(softmax(logits), stream);
            auto step = env.step(state, action, stream);
            traj.states.push_back(state);
            traj.actions.push_back(action);
            traj.rewards.push_back(step.reward);
            state = std::move(step.next_state);
            if (step.done) break;
        }
        traj.returns.resize(traj.rewards.size());
        double g = 0.0;
        for (int t = static_cast<int>(traj.rewards.size()) - 1; t >= 0; --t) {
            g = traj.rewards[t] + gamma_disc * g;
            traj.returns[t] = g;
        }
        out.push_back(std::move(traj));
    }
    return out;
}

// REINFORCE estimate of grad J with a time-indexed mean baseline:
//   (1/n) sum_e sum_t grad log pi(a_t|s_t) (returns[t] - baseline[t]),
// baseline[t] = mean over episodes of returns[t], zero-padded past each
// episode's end.
inline std::vector<double> estimate_policy_gradient(const std::vector<Trajectory>& trajectories,
                                                    const NetworkSpec& spec,
                                                    const ParamLayout& lo,
                                                    const std::vector<double>& particle) {
    if (trajectories.empty()) throw DimensionError("estimate_policy_gradient: no trajectories");
    const double n = static_cast<double>(trajectories.size());
    std::size_t t_max = 0;
    for (const auto& tr : trajectories) t_max = std::max(t_max, tr.returns.size());
    std::vector<double> baseline(t_max, 0.0);
    for (const auto& tr : trajectories)
        for (std::size_t t = 0; t < tr.returns.size(); ++t) baseline[t] += tr.returns[t];
    for (auto& b : baseline) b /= n;

    std::vector<double> grad(lo.total, 0.0);
    ForwardCache cache;
    std::vector<double> dL_df;
    for (const auto& tr : trajectories)
        for (std::size_t t = 0; t < tr.states.size(); ++t) {
            const auto logits = forward_cached(spec, lo, particle, tr.states[t], cache);
            const auto probs = softmax(logits);
            const double adv = (tr.returns[t] - baseline[t]) / n;
            dL_df.resize(probs.size());
            for (std::size_t k = 0; k < probs.size(); ++k)
                dL_df[k] = ((static_cast<int>(k) == tr.actions[t] ? 1.0 : 0.0) - probs[k]) * adv;
            backward_from_output(spec, lo, particle, cache, dL_df, grad);
        }
    return grad;
}

using PriorGradFn = std::function<std::vector<double>(const std::vector<double>& theta)>;

// One Stein policy-gradient update: particle scores (1/alpha) grad J +
// grad log p drive the usual SVGD direction and RMSProp step. Returns the
// scores for diagnostics.
inline std::vector<std::vector<double>> stein_policy_update(
    Ensemble& ensemble, const std::vector<std::vector<double>>& j_grads, double alpha,
    const PriorGradFn& prior_grad, const KernelConfig& kernel_cfg, const StepConfig& step_cfg) {
    if (!(alpha > 0.0)) throw ConfigError("stein_policy_update: alpha must be positive");
    const int m = ensemble.size();
    if (static_cast<int>(j_grads.size()) != m)
        throw DimensionError("stein_policy_update: gradient count != particle count");
    std::vector<std::vector<double>> scores(m);
    for (int i = 0; i < m; ++i) {
        scores[i] = prior_grad(ensemble.particles[i]);
        for (std::size_t d = 0; d < scores[i].size(); ++d)
            scores[i][d] += j_grads[i][d] / alpha;
    }
    const double h = median_bandwidth(ensemble.particles, kernel_cfg);
    svgd_step(ensemble, svgd_direction(ensemble.particles, scores, h), step_cfg);
    return scores;
}

// Convenience overload: the prior of the policy network itself. The
// recovery stream guards against collapsed Householder vectors after the
// step.
inline std::vector<std::vector<double>> stein_policy_update(
    Ensemble& ensemble, const std::vector<std::vector<double>>& j_grads, double alpha,
    const NetworkSpec& spec, const ParamLayout& lo, const KernelConfig& kernel_cfg,
    const StepConfig& step_cfg, RngStream* recovery_stream = nullptr) {
    auto scores = stein_policy_update(
        ensemble, j_grads, alpha,
        [&](const std::vector<double>& theta) {
            std::vector<double> g(lo.total, 0.0);
            log_prior_grad(spec, lo, theta, &g);
            return g;
        },
        kernel_cfg, step_cfg);
    if (recovery_stream)
        for (auto& p : ensemble.particles)
            reinit_collapsed_flow_vectors(lo, p, *recovery_stream);
    return scores;
}

} // namespace s2vgd
