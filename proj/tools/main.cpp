// Command-line front end: regression/classification training, contextual
// bandit runs, policy-gradient RL runs, and built-in diagnostics. Every
// experiment command is a pure function of (config, seed) up to the wall
// time field in summary.json.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "s2vgd/bandit.hpp"
#include "s2vgd/checkpoint.hpp"
#include "s2vgd/data.hpp"
#include "s2vgd/diag.hpp"
#include "s2vgd/rl.hpp"
#include "s2vgd/train.hpp"

using nlohmann::json;
using namespace s2vgd;

namespace {

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

int default_workers() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

std::string default_out() {
    const char* env = std::getenv("S2VGD_OUTPUT_DIR");
    return env && *env ? env : ".";
}

// Optional JSON config file; explicit command-line flags win over file
// values, unknown keys are rejected.
class ConfigMerger {
public:
    void add(const std::string& key, std::function<void(const json&)> apply) {
        appliers_[key] = std::move(apply);
    }

    void merge(CLI::App* cmd, const std::string& path) {
        if (path.empty()) return;
        std::ifstream in(path);
        if (!in) throw ConfigError("config: cannot open '" + path + "'");
        json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw ConfigError("config: parse failure in '" + path + "': " + e.what());
        }
        if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
        for (auto it = j.begin(); it != j.end(); ++it) {
            const auto found = appliers_.find(it.key());
            if (found == appliers_.end())
                throw ConfigError("config: unknown key '" + it.key() + "'");
            if (cmd->count("--" + it.key()) > 0) continue; // flag overrides file
            try {
                found->second(it.value());
            } catch (const json::exception& e) {
                throw ConfigError("config: bad value for '" + it.key() + "': " + e.what());
            }
        }
    }

private:
    std::map<std::string, std::function<void(const json&)>> appliers_;
};

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << content;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
    std::string s = "iter,log_posterior_mean,ksd,bandwidth,epsilon\n";
    for (const auto& r : trace)
        s += std::to_string(r.iter) + "," + fmt(r.log_posterior_mean) + "," + fmt(r.ksd) + "," +
             fmt(r.bandwidth) + "," + fmt(r.epsilon) + "\n";
    return s;
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

// ---------------------------------------------------------------------------
// regress / classify

struct TrainCliOpts {
    std::string dataset = "synthetic";
    std::string target_col = "last";
    std::vector<std::string> categorical_cols;
    bool no_header = false;
    std::vector<int> hidden;
    int K = 1;
    int M = 20;
    double epsilon = 1e-3;
    int batch = 100;
    int epochs = 500;
    double train_frac = -1.0; // -1: 0.9 for CSV, no split for synthetic
    double prior_var = 1.0;
    double hyper_a = 1.0;
    double hyper_b = 0.1;
    int decay_every = 0;
    double decay_factor = 0.5;
    std::string activation = "relu";
    std::uint64_t seed = 0;
    std::string out = default_out();
    int workers = default_workers();
    std::int64_t log_every = 10;
    int grid = -1; // classify only: -1 auto (2-D inputs), 0 off, 1 on
    int grid_res = 41;
    std::string config_path;
};

void add_train_options(CLI::App* cmd, TrainCliOpts& o, ConfigMerger& cfg, bool classify) {
    o.hidden = classify ? std::vector<int>{30} : std::vector<int>{50};
    cmd->add_option("--dataset", o.dataset, "CSV path or 'synthetic'")->capture_default_str();
    cfg.add("dataset", [&o](const json& v) { o.dataset = v.get<std::string>(); });
    cmd->add_option("--target-col", o.target_col,
                    "target column name, 0-based index, or 'last'")
        ->capture_default_str();
    cfg.add("target-col", [&o](const json& v) { o.target_col = v.get<std::string>(); });
    cmd->add_option("--categorical-cols", o.categorical_cols,
                    "feature columns to one-hot encode")
        ->delimiter(',');
    cfg.add("categorical-cols",
            [&o](const json& v) { o.categorical_cols = v.get<std::vector<std::string>>(); });
    cmd->add_flag("--no-header", o.no_header, "CSV has no header row");
    cfg.add("no-header", [&o](const json& v) { o.no_header = v.get<bool>(); });
    cmd->add_option("--hidden", o.hidden, "hidden layer widths")
        ->delimiter(',')
        ->capture_default_str();
    cfg.add("hidden", [&o](const json& v) { o.hidden = v.get<std::vector<int>>(); });
    cmd->add_option("--K", o.K, "Householder flow length per factor")->capture_default_str();
    cfg.add("K", [&o](const json& v) { o.K = v.get<int>(); });
    cmd->add_option("--M", o.M, "number of particles")->capture_default_str();
    cfg.add("M", [&o](const json& v) { o.M = v.get<int>(); });
    cmd->add_option("--epsilon", o.epsilon, "base step size")->capture_default_str();
    cfg.add("epsilon", [&o](const json& v) { o.epsilon = v.get<double>(); });
    cmd->add_option("--batch", o.batch, "minibatch size")->capture_default_str();
    cfg.add("batch", [&o](const json& v) { o.batch = v.get<int>(); });
    cmd->add_option("--epochs", o.epochs, "training epochs")->capture_default_str();
    cfg.add("epochs", [&o](const json& v) { o.epochs = v.get<int>(); });
    cmd->add_option("--train-frac", o.train_frac,
                    "train fraction; default 0.9 for CSV, 1 (no split) for synthetic");
    cfg.add("train-frac", [&o](const json& v) { o.train_frac = v.get<double>(); });
    cmd->add_option("--prior-var", o.prior_var, "initial prior variance exp(log sigma^2)")
        ->capture_default_str();
    cfg.add("prior-var", [&o](const json& v) { o.prior_var = v.get<double>(); });
    cmd->add_option("--hyper-a", o.hyper_a, "inverse-gamma shape")->capture_default_str();
    cfg.add("hyper-a", [&o](const json& v) { o.hyper_a = v.get<double>(); });
    cmd->add_option("--hyper-b", o.hyper_b, "inverse-gamma scale")->capture_default_str();
    cfg.add("hyper-b", [&o](const json& v) { o.hyper_b = v.get<double>(); });
    cmd->add_option("--decay-every", o.decay_every, "halve the step size every this many epochs")
        ->capture_default_str();
    cfg.add("decay-every", [&o](const json& v) { o.decay_every = v.get<int>(); });
    cmd->add_option("--decay-factor", o.decay_factor, "step decay factor")->capture_default_str();
    cfg.add("decay-factor", [&o](const json& v) { o.decay_factor = v.get<double>(); });
    cmd->add_option("--activation", o.activation, "relu or tanh")
        ->check(CLI::IsMember({"relu", "tanh"}))
        ->capture_default_str();
    cfg.add("activation", [&o](const json& v) { o.activation = v.get<std::string>(); });
    cmd->add_option("--seed", o.seed, "master seed")->required();
    cfg.add("seed", [&o](const json& v) { o.seed = v.get<std::uint64_t>(); });
    cmd->add_option("--out", o.out, "output directory (or S2VGD_OUTPUT_DIR)")
        ->capture_default_str();
    cfg.add("out", [&o](const json& v) { o.out = v.get<std::string>(); });
    cmd->add_option("--workers", o.workers, "gradient worker threads; 1 = canonical trace")
        ->capture_default_str();
    cfg.add("workers", [&o](const json& v) { o.workers = v.get<int>(); });
    cmd->add_option("--log-every", o.log_every, "engine trace period in iterations")
        ->capture_default_str();
    cfg.add("log-every", [&o](const json& v) { o.log_every = v.get<std::int64_t>(); });
    if (classify) {
        cmd->add_option("--grid", o.grid, "emit probability grid CSV (1/0; default: 2-D only)");
        cfg.add("grid", [&o](const json& v) { o.grid = v.get<int>(); });
        cmd->add_option("--grid-res", o.grid_res, "grid resolution per axis")
            ->capture_default_str();
        cfg.add("grid-res", [&o](const json& v) { o.grid_res = v.get<int>(); });
    }
    cmd->add_option("--config", o.config_path, "JSON config file; flags override");
}

json train_config_json(const TrainCliOpts& o, bool classify) {
    json j{{"dataset", o.dataset},
           {"target-col", o.target_col},
           {"categorical-cols", o.categorical_cols},
           {"no-header", o.no_header},
           {"hidden", o.hidden},
           {"K", o.K},
           {"M", o.M},
           {"epsilon", o.epsilon},
           {"batch", o.batch},
           {"epochs", o.epochs},
           {"train-frac", o.train_frac},
           {"prior-var", o.prior_var},
           {"hyper-a", o.hyper_a},
           {"hyper-b", o.hyper_b},
           {"decay-every", o.decay_every},
           {"decay-factor", o.decay_factor},
           {"activation", o.activation},
           {"seed", o.seed},
           {"out", o.out},
           {"workers", o.workers},
           {"log-every", o.log_every}};
    if (classify) {
        j["grid"] = o.grid;
        j["grid-res"] = o.grid_res;
    }
    return j;
}

// Loads the requested dataset and produces normalized train/test splits.
std::pair<Dataset, Dataset> prepare_data(const TrainCliOpts& o, bool classify) {
    Dataset raw;
    if (o.dataset == "synthetic") {
        RngStream data_stream(o.seed, 7777);
        raw = classify ? synthetic_classification(data_stream) : synthetic_regression(data_stream);
    } else {
        CsvSchema schema;
        schema.header = !o.no_header;
        schema.classification_target = classify;
        schema.categorical_columns = o.categorical_cols;
        if (o.target_col == "last") {
            std::ifstream probe(o.dataset);
            if (!probe) throw DataError("dataset: cannot open '" + o.dataset + "'");
            std::string first;
            std::getline(probe, first);
            const auto cells = detail::split_line(first);
            if (cells.empty()) throw DataError("dataset: '" + o.dataset + "' is empty");
            schema.target_column = std::to_string(cells.size() - 1);
        } else {
            schema.target_column = o.target_col;
        }
        raw = load_csv(o.dataset, schema);
    }

    double frac = o.train_frac;
    if (frac < 0.0) frac = o.dataset == "synthetic" ? 1.0 : 0.9;
    if (frac >= 1.0) {
        Dataset train = raw, test = raw;
        normalize_with_train_stats(train, test);
        return {std::move(train), std::move(test)};
    }
    RngStream split_stream(o.seed, 8888);
    auto split = split_and_normalize(raw, frac, split_stream);
    return {std::move(split.train), std::move(split.test)};
}

TrainConfig to_train_config(const TrainCliOpts& o) {
    TrainConfig cfg;
    cfg.hidden = o.hidden;
    cfg.K = o.K;
    cfg.M = o.M;
    cfg.epsilon = o.epsilon;
    cfg.batch = o.batch;
    cfg.epochs = o.epochs;
    cfg.seed = o.seed;
    cfg.workers = o.workers;
    cfg.prior_variance_init = o.prior_var;
    cfg.hyper = {o.hyper_a, o.hyper_b};
    cfg.activation = o.activation == "tanh" ? Activation::tanh : Activation::relu;
    cfg.decay_every = o.decay_every;
    cfg.decay_factor = o.decay_factor;
    cfg.log_every = o.log_every;
    return cfg;
}

int cmd_regress(const TrainCliOpts& o) {
    Timer timer;
    auto [train, test] = prepare_data(o, false);
    const TrainResult res = train_network(train, test, to_train_config(o));

    std::filesystem::create_directories(o.out);
    std::string metrics = "epoch,train_log_posterior,test_rmse,test_loglik\n";
    for (const auto& m : res.metrics)
        metrics += std::to_string(m.epoch) + "," + fmt(m.train_log_posterior) + "," +
                   fmt(m.test_rmse) + "," + fmt(m.test_loglik) + "\n";
    write_file(std::filesystem::path(o.out) / "metrics.csv", metrics);
    write_file(std::filesystem::path(o.out) / "trace.csv", trace_csv(res.trace));
    save_checkpoint((std::filesystem::path(o.out) / "checkpoint.json").string(), res.spec,
                    res.layout, res.ensemble);

    json summary;
    summary["command"] = "regress";
    summary["config"] = train_config_json(o, false);
    const auto& last = res.metrics.back();
    summary["results"] = {{"final_test_rmse", last.test_rmse},
                          {"final_test_loglik", last.test_loglik},
                          {"final_train_log_posterior", last.train_log_posterior},
                          {"epochs", last.epoch},
                          {"n_train", train.size()},
                          {"n_test", test.size()}};
    summary["wall_time_seconds"] = timer.seconds();
    write_file(std::filesystem::path(o.out) / "summary.json", summary.dump(2) + "\n");
    std::cout << "regress: test RMSE " << last.test_rmse << ", test log-likelihood "
              << last.test_loglik << "\n";
    return 0;
}

int cmd_classify(const TrainCliOpts& o) {
    Timer timer;
    auto [train, test] = prepare_data(o, true);
    const TrainResult res = train_network(train, test, to_train_config(o));

    std::filesystem::create_directories(o.out);
    std::string metrics = "epoch,train_log_posterior,train_accuracy,test_accuracy\n";
    for (const auto& m : res.metrics)
        metrics += std::to_string(m.epoch) + "," + fmt(m.train_log_posterior) + "," +
                   fmt(m.train_accuracy) + "," + fmt(m.test_accuracy) + "\n";
    write_file(std::filesystem::path(o.out) / "metrics.csv", metrics);
    write_file(std::filesystem::path(o.out) / "trace.csv", trace_csv(res.trace));
    save_checkpoint((std::filesystem::path(o.out) / "checkpoint.json").string(), res.spec,
                    res.layout, res.ensemble);

    const bool emit_grid = o.grid == 1 || (o.grid < 0 && train.input_dim() == 2);
    if (emit_grid) {
        std::string grid;
        grid.reserve(1 << 20);
        grid += "x1,x2";
        for (int c = 0; c < train.n_classes; ++c) grid += ",p" + std::to_string(c);
        grid += "\n";
        const int res_n = o.grid_res;
        for (int a = 0; a < res_n; ++a)
            for (int b = 0; b < res_n; ++b) {
                const double x1 = -4.0 + 8.0 * a / (res_n - 1);
                const double x2 = -4.0 + 8.0 * b / (res_n - 1);
                const auto x = normalize_input(train.norm, {x1, x2});
                const auto pred =
                    predict_ensemble(res.spec, res.layout, res.ensemble.particles, x);
                grid += fmt(x1) + "," + fmt(x2);
                for (double p : pred.probs) grid += "," + fmt(p);
                grid += "\n";
            }
        write_file(std::filesystem::path(o.out) / "grid.csv", grid);
    }

    json summary;
    summary["command"] = "classify";
    summary["config"] = train_config_json(o, true);
    const auto& last = res.metrics.back();
    summary["results"] = {{"final_train_accuracy", last.train_accuracy},
                          {"final_test_accuracy", last.test_accuracy},
                          {"final_train_log_posterior", last.train_log_posterior},
                          {"epochs", last.epoch},
                          {"n_train", train.size()},
                          {"n_test", test.size()}};
    summary["wall_time_seconds"] = timer.seconds();
    write_file(std::filesystem::path(o.out) / "summary.json", summary.dump(2) + "\n");
    std::cout << "classify: train accuracy " << last.train_accuracy << ", test accuracy "
              << last.test_accuracy << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// bandit

struct BanditCliOpts {
    std::string env = "mushroom_synthetic";
    int steps = 5000;
    std::string method = "stein_thompson";
    int M = 20;
    int K = 1;
    std::vector<int> hidden = {50};
    double epsilon = 1e-3;
    int n_update = 8;
    int batch = 64;
    int capacity = 4096;
    double prior_var = 1.0;
    int synth_items = 2000;
    int synth_dim = 20;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds;
    std::string out = default_out();
    int workers = default_workers();
    std::string config_path;
};

json bandit_config_json(const BanditCliOpts& o) {
    return {{"env", o.env},         {"steps", o.steps},
            {"method", o.method},   {"M", o.M},
            {"K", o.K},             {"hidden", o.hidden},
            {"epsilon", o.epsilon}, {"n-update", o.n_update},
            {"batch", o.batch},     {"capacity", o.capacity},
            {"prior-var", o.prior_var}, {"synth-items", o.synth_items},
            {"synth-dim", o.synth_dim}, {"seed", o.seed},
            {"seeds", o.seeds},     {"out", o.out},
            {"workers", o.workers}};
}

struct BanditRunOutput {
    std::vector<BanditRecord> records;
    std::vector<double> cumulative_reward;
    std::vector<double> regret;
};

BanditRunOutput run_bandit_once(const BanditCliOpts& o, std::uint64_t seed) {
    std::unique_ptr<MushroomEnv> env;
    RngStream env_build(seed, 17);
    if (o.env == "mushroom_synthetic") {
        env = std::make_unique<MushroomEnv>(
            MushroomEnv::synthetic(o.synth_items, o.synth_dim, env_build));
    } else if (o.env.rfind("mushroom_csv:", 0) == 0) {
        env = std::make_unique<MushroomEnv>(MushroomEnv::from_csv(o.env.substr(13)));
    } else {
        throw ConfigError("bandit: unknown env '" + o.env + "'");
    }

    double eps_explore = 0.0;
    bool thompson = false;
    if (o.method == "stein_thompson") {
        thompson = true;
    } else if (o.method == "greedy") {
        eps_explore = 0.0;
    } else if (o.method.rfind("eps_greedy:", 0) == 0) {
        try {
            eps_explore = std::stod(o.method.substr(11));
        } catch (...) {
            throw ConfigError("bandit: bad epsilon in method '" + o.method + "'");
        }
        if (eps_explore < 0.0 || eps_explore > 1.0)
            throw ConfigError("bandit: exploration epsilon must lie in [0, 1]");
    } else {
        throw ConfigError("bandit: unknown method '" + o.method + "'");
    }

    NetworkSpec spec;
    spec.layer_dims = {env->context_dim()};
    for (int h : o.hidden) spec.layer_dims.push_back(h);
    spec.layer_dims.push_back(env->n_actions());
    for (int l = 0; l < static_cast<int>(spec.layer_dims.size()) - 1; ++l)
        spec.K_per_layer.push_back(
            std::min(o.K, std::min(spec.layer_dims[l], spec.layer_dims[l + 1])));
    spec.likelihood = Likelihood::gaussian_regression;
    spec.prior_variance_init = o.prior_var;
    spec.validate();
    const ParamLayout layout = make_layout(spec);

    const RngStream master(seed, 0);
    const int m = thompson ? o.M : 1;
    std::vector<std::vector<double>> particles(m);
    for (int i = 0; i < m; ++i) {
        RngStream s = master.substream(0x1000 + static_cast<std::uint64_t>(i));
        particles[i] = init_particle(spec, layout, s);
    }
    Ensemble ensemble = Ensemble::of(std::move(particles));
    ReplayBuffer buffer(o.capacity);
    BanditUpdateConfig update_cfg{o.n_update, o.batch};
    KernelConfig kernel_cfg;
    StepConfig step_cfg;
    step_cfg.epsilon = o.epsilon;

    const RngStream step_root = master.substream(2);
    BanditRunOutput out;
    double reward_sum = 0.0;
    for (int t = 0; t < o.steps; ++t) {
        RngStream step_stream = step_root.substream(static_cast<std::uint64_t>(t));
        BanditStepResult r;
        if (thompson) {
            r = stein_thompson_step(ensemble, *env, buffer, spec, layout, update_cfg,
                                    kernel_cfg, step_cfg, step_stream, o.workers);
        } else {
            r = epsilon_greedy_step(ensemble, *env, buffer, spec, layout, eps_explore,
                                    update_cfg, step_cfg, step_stream);
        }
        reward_sum += r.reward;
        out.cumulative_reward.push_back(reward_sum);
        out.records.push_back({std::move(r.context), r.action, r.reward});
        if (!all_finite(ensemble.particles[0]))
            throw NumericError("bandit: particle diverged (NaN/Inf)");
    }
    out.regret = cumulative_regret(out.records, *env);
    return out;
}

std::string bandit_run_csv(const BanditRunOutput& run) {
    std::string csv = "step,action,reward,cumulative_reward,cumulative_regret\n";
    for (std::size_t t = 0; t < run.records.size(); ++t)
        csv += std::to_string(t + 1) + "," + std::to_string(run.records[t].action) + "," +
               fmt(run.records[t].reward) + "," + fmt(run.cumulative_reward[t]) + "," +
               fmt(run.regret[t]) + "\n";
    return csv;
}

int cmd_bandit(const BanditCliOpts& o) {
    Timer timer;
    std::filesystem::create_directories(o.out);
    json summary;
    summary["command"] = "bandit";
    summary["config"] = bandit_config_json(o);

    if (o.seeds.empty()) {
        const auto run = run_bandit_once(o, o.seed);
        write_file(std::filesystem::path(o.out) / "run.csv", bandit_run_csv(run));
        summary["results"] = {{"final_cumulative_regret", run.regret.back()},
                              {"final_cumulative_reward", run.cumulative_reward.back()},
                              {"steps", o.steps}};
        std::cout << "bandit[" << o.method << "]: final regret " << run.regret.back() << "\n";
    } else {
        std::vector<double> finals;
        for (const auto s : o.seeds) {
            const auto run = run_bandit_once(o, s);
            write_file(std::filesystem::path(o.out) / ("run_seed" + std::to_string(s) + ".csv"),
                       bandit_run_csv(run));
            finals.push_back(run.regret.back());
            std::cout << "bandit[" << o.method << "] seed " << s << ": final regret "
                      << run.regret.back() << "\n";
        }
        double mean = 0.0;
        for (double f : finals) mean += f;
        mean /= static_cast<double>(finals.size());
        double var = 0.0;
        for (double f : finals) var += (f - mean) * (f - mean);
        var /= static_cast<double>(finals.size());
        summary["results"] = {{"final_regret_per_seed", finals},
                              {"final_regret_mean", mean},
                              {"final_regret_std", std::sqrt(var)},
                              {"steps", o.steps}};
        std::cout << "bandit[" << o.method << "]: regret " << mean << " +/- " << std::sqrt(var)
                  << " over " << finals.size() << " seeds\n";
    }
    summary["wall_time_seconds"] = timer.seconds();
    write_file(std::filesystem::path(o.out) / "summary.json", summary.dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// rl

struct RlCliOpts {
    int M = 8;
    double alpha = 10.0;
    int iters = 100;
    int episodes = 16; // per particle per iteration
    double gamma_disc = 0.99;
    std::vector<int> hidden = {25, 10};
    int K = 1;
    double epsilon = 5e-3;
    double prior_var = 0.01;
    std::uint64_t seed = 0;
    std::string out = default_out();
    int workers = default_workers();
    std::string config_path;
};

json rl_config_json(const RlCliOpts& o) {
    return {{"M", o.M},           {"alpha", o.alpha},
            {"iters", o.iters},   {"episodes", o.episodes},
            {"gamma", o.gamma_disc}, {"hidden", o.hidden},
            {"K", o.K},           {"epsilon", o.epsilon},
            {"prior-var", o.prior_var}, {"seed", o.seed},
            {"out", o.out},       {"workers", o.workers}};
}

int cmd_rl(const RlCliOpts& o) {
    Timer timer;
    CartPoleEnv env;

    NetworkSpec spec;
    spec.layer_dims = {env.state_dim()};
    for (int h : o.hidden) spec.layer_dims.push_back(h);
    spec.layer_dims.push_back(env.n_actions());
    for (int l = 0; l < static_cast<int>(spec.layer_dims.size()) - 1; ++l)
        spec.K_per_layer.push_back(
            std::min(o.K, std::min(spec.layer_dims[l], spec.layer_dims[l + 1])));
    spec.activation = Activation::tanh;
    spec.likelihood = Likelihood::categorical;
    spec.prior_variance_init = o.prior_var;
    spec.validate();
    const ParamLayout layout = make_layout(spec);

    const RngStream master(o.seed, 0);
    std::vector<std::vector<double>> particles(o.M);
    for (int i = 0; i < o.M; ++i) {
        RngStream s = master.substream(0x1000 + static_cast<std::uint64_t>(i));
        particles[i] = init_particle(spec, layout, s);
    }
    Ensemble ensemble = Ensemble::of(std::move(particles));
    KernelConfig kernel_cfg;
    StepConfig step_cfg;
    step_cfg.epsilon = o.epsilon;
    const RngStream episode_root = master.substream(2);
    const RngStream recovery_root = master.substream(3);

    std::string csv = "iteration,mean_return,std_return,ksd,alpha\n";
    double final_mean = 0.0;
    std::vector<std::vector<double>> j_grads(o.M);
    std::vector<double> particle_mean_return(o.M);
    for (int it = 1; it <= o.iters; ++it) {
        const RngStream iter_root = episode_root.substream(static_cast<std::uint64_t>(it));
        parallel_for(o.M, o.workers, [&](int i) {
            // each worker owns a per-(iteration, particle) stream
            RngStream s = iter_root.substream(static_cast<std::uint64_t>(i));
            CartPoleEnv local_env;
            const auto trajs = collect_trajectories(spec, layout, ensemble.particles[i],
                                                    local_env, o.episodes, o.gamma_disc, s);
            double mean_ret = 0.0;
            for (const auto& tr : trajs) mean_ret += tr.undiscounted_return();
            particle_mean_return[i] = mean_ret / static_cast<double>(trajs.size());
            j_grads[i] = estimate_policy_gradient(trajs, spec, layout, ensemble.particles[i]);
        });
        double mean = 0.0, var = 0.0;
        for (double r : particle_mean_return) mean += r;
        mean /= o.M;
        for (double r : particle_mean_return) var += (r - mean) * (r - mean);
        var /= o.M;

        const auto before = ensemble.particles;
        RngStream recovery = recovery_root.substream(static_cast<std::uint64_t>(it));
        const auto scores = stein_policy_update(ensemble, j_grads, o.alpha, spec, layout,
                                                kernel_cfg, step_cfg, &recovery);
        const double ksd =
            o.M >= 2 ? ksd_diagnostic(before, scores, median_bandwidth(before, kernel_cfg)) : 0.0;
        csv += std::to_string(it) + "," + fmt(mean) + "," + fmt(std::sqrt(var)) + "," +
               fmt(ksd) + "," + fmt(o.alpha) + "\n";
        final_mean = mean;
        for (const auto& p : ensemble.particles)
            if (!all_finite(p)) throw NumericError("rl: particle diverged (NaN/Inf)");
    }

    std::filesystem::create_directories(o.out);
    write_file(std::filesystem::path(o.out) / "run.csv", csv);
    json summary;
    summary["command"] = "rl";
    summary["config"] = rl_config_json(o);
    summary["results"] = {{"final_mean_return", final_mean}, {"iterations", o.iters}};
    summary["wall_time_seconds"] = timer.seconds();
    write_file(std::filesystem::path(o.out) / "summary.json", summary.dump(2) + "\n");
    std::cout << "rl: final mean return " << final_mean << " after " << o.iters
              << " iterations\n";
    return 0;
}

// ---------------------------------------------------------------------------
// diag

int cmd_diag() {
    const auto results = run_diagnostics();
    bool all_pass = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
        all_pass &= r.pass;
    }
    return all_pass ? 0 : 4;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stein variational ensembles over structured-prior Bayesian networks"};
    app.require_subcommand(1);

    TrainCliOpts regress_opts, classify_opts;
    BanditCliOpts bandit_opts;
    RlCliOpts rl_opts;
    ConfigMerger regress_cfg, classify_cfg, bandit_cfg, rl_cfg;

    auto* regress = app.add_subcommand("regress", "train a regression ensemble");
    add_train_options(regress, regress_opts, regress_cfg, false);
    auto* classify = app.add_subcommand("classify", "train a classification ensemble");
    add_train_options(classify, classify_opts, classify_cfg, true);

    auto* bandit = app.add_subcommand("bandit", "contextual bandit interaction loop");
    {
        auto& o = bandit_opts;
        auto& cfg = bandit_cfg;
        bandit->add_option("--env", o.env, "mushroom_synthetic or mushroom_csv:<path>")
            ->capture_default_str();
        cfg.add("env", [&o](const json& v) { o.env = v.get<std::string>(); });
        bandit->add_option("--steps", o.steps, "interaction steps")->capture_default_str();
        cfg.add("steps", [&o](const json& v) { o.steps = v.get<int>(); });
        bandit->add_option("--method", o.method,
                           "stein_thompson, greedy, or eps_greedy:<epsilon>")
            ->capture_default_str();
        cfg.add("method", [&o](const json& v) { o.method = v.get<std::string>(); });
        bandit->add_option("--M", o.M, "particles (Thompson only)")->capture_default_str();
        cfg.add("M", [&o](const json& v) { o.M = v.get<int>(); });
        bandit->add_option("--K", o.K, "Householder flow length")->capture_default_str();
        cfg.add("K", [&o](const json& v) { o.K = v.get<int>(); });
        bandit->add_option("--hidden", o.hidden, "hidden widths")
            ->delimiter(',')
            ->capture_default_str();
        cfg.add("hidden", [&o](const json& v) { o.hidden = v.get<std::vector<int>>(); });
        bandit->add_option("--epsilon", o.epsilon, "SVGD step size")->capture_default_str();
        cfg.add("epsilon", [&o](const json& v) { o.epsilon = v.get<double>(); });
        bandit->add_option("--n-update", o.n_update, "SVGD iterations per environment step")
            ->capture_default_str();
        cfg.add("n-update", [&o](const json& v) { o.n_update = v.get<int>(); });
        bandit->add_option("--batch", o.batch, "replay minibatch size")->capture_default_str();
        cfg.add("batch", [&o](const json& v) { o.batch = v.get<int>(); });
        bandit->add_option("--capacity", o.capacity, "replay buffer capacity")
            ->capture_default_str();
        cfg.add("capacity", [&o](const json& v) { o.capacity = v.get<int>(); });
        bandit->add_option("--prior-var", o.prior_var, "initial prior variance")
            ->capture_default_str();
        cfg.add("prior-var", [&o](const json& v) { o.prior_var = v.get<double>(); });
        bandit->add_option("--synth-items", o.synth_items, "synthetic table size")
            ->capture_default_str();
        cfg.add("synth-items", [&o](const json& v) { o.synth_items = v.get<int>(); });
        bandit->add_option("--synth-dim", o.synth_dim, "synthetic feature dimension")
            ->capture_default_str();
        cfg.add("synth-dim", [&o](const json& v) { o.synth_dim = v.get<int>(); });
        bandit->add_option("--seed", o.seed, "master seed")->required();
        cfg.add("seed", [&o](const json& v) { o.seed = v.get<std::uint64_t>(); });
        bandit->add_option("--seeds", o.seeds, "multi-seed driver; aggregate summary")
            ->delimiter(',');
        cfg.add("seeds", [&o](const json& v) { o.seeds = v.get<std::vector<std::uint64_t>>(); });
        bandit->add_option("--out", o.out, "output directory")->capture_default_str();
        cfg.add("out", [&o](const json& v) { o.out = v.get<std::string>(); });
        bandit->add_option("--workers", o.workers, "gradient worker threads")
            ->capture_default_str();
        cfg.add("workers", [&o](const json& v) { o.workers = v.get<int>(); });
        bandit->add_option("--config", o.config_path, "JSON config file; flags override");
    }

    auto* rl = app.add_subcommand("rl", "Stein policy gradient on cart-pole");
    {
        auto& o = rl_opts;
        auto& cfg = rl_cfg;
        rl->add_option("--M", o.M, "particles")->capture_default_str();
        cfg.add("M", [&o](const json& v) { o.M = v.get<int>(); });
        rl->add_option("--alpha", o.alpha, "exploration temperature")->capture_default_str();
        cfg.add("alpha", [&o](const json& v) { o.alpha = v.get<double>(); });
        rl->add_option("--iters", o.iters, "training iterations")->capture_default_str();
        cfg.add("iters", [&o](const json& v) { o.iters = v.get<int>(); });
        rl->add_option("--episodes", o.episodes, "episodes per particle per iteration")
            ->capture_default_str();
        cfg.add("episodes", [&o](const json& v) { o.episodes = v.get<int>(); });
        rl->add_option("--gamma", o.gamma_disc, "discount factor")->capture_default_str();
        cfg.add("gamma", [&o](const json& v) { o.gamma_disc = v.get<double>(); });
        rl->add_option("--hidden", o.hidden, "policy hidden widths")
            ->delimiter(',')
            ->capture_default_str();
        cfg.add("hidden", [&o](const json& v) { o.hidden = v.get<std::vector<int>>(); });
        rl->add_option("--K", o.K, "Householder flow length")->capture_default_str();
        cfg.add("K", [&o](const json& v) { o.K = v.get<int>(); });
        rl->add_option("--epsilon", o.epsilon, "SVGD step size")->capture_default_str();
        cfg.add("epsilon", [&o](const json& v) { o.epsilon = v.get<double>(); });
        rl->add_option("--prior-var", o.prior_var, "initial prior variance")
            ->capture_default_str();
        cfg.add("prior-var", [&o](const json& v) { o.prior_var = v.get<double>(); });
        rl->add_option("--seed", o.seed, "master seed")->required();
        cfg.add("seed", [&o](const json& v) { o.seed = v.get<std::uint64_t>(); });
        rl->add_option("--out", o.out, "output directory")->capture_default_str();
        cfg.add("out", [&o](const json& v) { o.out = v.get<std::string>(); });
        rl->add_option("--workers", o.workers, "episode worker threads")->capture_default_str();
        cfg.add("workers", [&o](const json& v) { o.workers = v.get<int>(); });
        rl->add_option("--config", o.config_path, "JSON config file; flags override");
    }

    auto* diag = app.add_subcommand("diag", "run the built-in verification suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (regress->parsed()) {
            regress_cfg.merge(regress, regress_opts.config_path);
            return cmd_regress(regress_opts);
        }
        if (classify->parsed()) {
            classify_cfg.merge(classify, classify_opts.config_path);
            return cmd_classify(classify_opts);
        }
        if (bandit->parsed()) {
            bandit_cfg.merge(bandit, bandit_opts.config_path);
            return cmd_bandit(bandit_opts);
        }
        if (rl->parsed()) {
            rl_cfg.merge(rl, rl_opts.config_path);
            return cmd_rl(rl_opts);
        }
        if (diag->parsed()) return cmd_diag();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
