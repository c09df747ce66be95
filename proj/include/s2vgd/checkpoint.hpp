#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2vgd/errors.hpp"
#include "s2vgd/network.hpp"
#include "s2vgd/svgd.hpp"

namespace s2vgd {

inline nlohmann::json spec_to_json(const NetworkSpec& spec) {
    return {{"layer_dims", spec.layer_dims},
            {"K_per_layer", spec.K_per_layer},
            {"activation", spec.activation == Activation::relu ? "relu" : "tanh"},
            {"likelihood",
             spec.likelihood == Likelihood::gaussian_regression ? "gaussian_regression"
                                                                : "categorical"},
            {"hyper_a", spec.hyper.a},
            {"hyper_b", spec.hyper.b},
            {"prior_variance_init", spec.prior_variance_init}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
    NetworkSpec spec;
    spec.layer_dims = j.at("layer_dims").get<std::vector<int>>();
    spec.K_per_layer = j.at("K_per_layer").get<std::vector<int>>();
    const std::string act = j.at("activation").get<std::string>();
    if (act == "relu")
        spec.activation = Activation::relu;
    else if (act == "tanh")
        spec.activation = Activation::tanh;
    else
        throw DataError("checkpoint: unknown activation '" + act + "'");
    const std::string lik = j.at("likelihood").get<std::string>();
    if (lik == "gaussian_regression")
        spec.likelihood = Likelihood::gaussian_regression;
    else if (lik == "categorical")
        spec.likelihood = Likelihood::categorical;
    else
        throw DataError("checkpoint: unknown likelihood '" + lik + "'");
    spec.hyper.a = j.at("hyper_a").get<double>();
    spec.hyper.b = j.at("hyper_b").get<double>();
    spec.prior_variance_init = j.at("prior_variance_init").get<double>();
    spec.validate();
    return spec;
}

// Checkpoint document: spec fields, the layout descriptor, and per-particle
// value arrays at full double precision (the JSON writer emits the shortest
// representation that parses back to the identical bits).
inline nlohmann::json checkpoint_to_json(const NetworkSpec& spec, const ParamLayout& lo,
                                         const Ensemble& ensemble) {
    nlohmann::json layout;
    layout["total"] = lo.total;
    layout["has_log_gamma"] = lo.has_log_gamma;
    std::vector<int> offsets;
    for (const auto& l : lo.layers) offsets.push_back(l.offset);
    layout["layer_offsets"] = offsets;

    nlohmann::json j;
    j["spec"] = spec_to_json(spec);
    j["layout"] = layout;
    j["step_count"] = ensemble.step_count;
    j["particles"] = ensemble.particles;
    return j;
}

struct Checkpoint {
    NetworkSpec spec;
    ParamLayout layout;
    Ensemble ensemble;
};

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    Checkpoint ck;
    ck.spec = spec_from_json(j.at("spec"));
    ck.layout = make_layout(ck.spec);
    if (j.at("layout").at("total").get<int>() != ck.layout.total)
        throw DataError("checkpoint: layout total disagrees with spec");
    auto particles = j.at("particles").get<std::vector<std::vector<double>>>();
    for (const auto& p : particles)
        if (static_cast<int>(p.size()) != ck.layout.total)
            throw DataError("checkpoint: particle length disagrees with layout");
    ck.ensemble = Ensemble::of(std::move(particles));
    ck.ensemble.step_count = j.at("step_count").get<std::int64_t>();
    return ck;
}

inline void save_checkpoint(const std::string& path, const NetworkSpec& spec,
                            const ParamLayout& lo, const Ensemble& ensemble) {
    std::ofstream out(path);
    if (!out) throw DataError("checkpoint: cannot write '" + path + "'");
    out << checkpoint_to_json(spec, lo, ensemble).dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("checkpoint: parse failure in '" + path + "': " + e.what());
    }
    return checkpoint_from_json(j);
}

} // namespace s2vgd
