#pragma once

// Run configuration: one JSON document, schema-validated with unknown keys
// rejected. Every run copies its resolved configuration into the output
// directory.

#include "palm/avatar.hpp"
#include "palm/dataset.hpp"
#include "palm/train.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>

namespace palm {

struct RunConfig {
    uint64_t seed = 0;
    int threads = 0;  // 0 = library default
    DatasetConfig dataset;
    ModelSpec model;
    std::string variant = "main";  // main | supp: which decoder is the deep one
    TrainSchedule schedule;
    AdamConfig adam;
    LossWeights weights;
    double background = 0.0;
    std::string data_dir;  // filled in when a run is created

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);
    void save(const std::string& path) const;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                           const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError(format_msg("config: unknown key \"", it.key(), "\" in ", where));
}

}  // namespace detail

inline nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["threads"] = threads;
    j["data_dir"] = data_dir;
    j["dataset"] = {{"views", dataset.views},
                    {"train_frames", dataset.train_frames},
                    {"holdout_frames", dataset.holdout_frames},
                    {"width", dataset.width},
                    {"height", dataset.height},
                    {"rig_vertices", dataset.rig_vertices},
                    {"rig_joints", dataset.rig_joints},
                    {"subdiv", dataset.subdiv},
                    {"truth_disp_amp", dataset.truth_disp_amp}};
    j["model"] = {{"variant", variant},
                  {"dec_lbs", {model.dec_lbs.depth, model.dec_lbs.width}},
                  {"dec_disp", {model.dec_disp.depth, model.dec_disp.width}},
                  {"dec_albedo", {model.dec_albedo.depth, model.dec_albedo.width}},
                  {"q_latent", model.q_latent},
                  {"implicit_dim", model.implicit_dim},
                  {"neural_depth", model.neural.depth},
                  {"neural_width", model.neural.width},
                  {"neural_skip", model.neural.skip_layer},
                  {"freq_x", model.neural.freq_x},
                  {"freq_d", model.neural.freq_d},
                  {"q_render", model.neural.q_render}};
    j["train"] = {{"lr", adam.lr},
                  {"stage_init_iters", schedule.stage_init_iters},
                  {"stage_embed_epochs", schedule.stage_embed_epochs},
                  {"stage_neural_epochs", schedule.stage_neural_epochs},
                  {"update_avg_every", schedule.update_avg_every},
                  {"checkpoint_every", schedule.checkpoint_every},
                  {"joint_neural", schedule.joint_neural},
                  {"lambda", weights.lambda},
                  {"omega", weights.omega},
                  {"alpha1", weights.alpha1},
                  {"alpha2", weights.alpha2},
                  {"alpha3", weights.alpha3},
                  {"plap_albedo",
                   {{"quantile", weights.plap_albedo.quantile},
                    {"gamma1", weights.plap_albedo.gamma1},
                    {"gamma2", weights.plap_albedo.gamma2}}},
                  {"plap_disp",
                   {{"quantile", weights.plap_disp.quantile},
                    {"gamma1", weights.plap_disp.gamma1},
                    {"gamma2", weights.plap_disp.gamma2}}}};
    j["render"] = {{"background", background}};
    return j;
}

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
    detail::reject_unknown(
        j, {"seed", "threads", "data_dir", "dataset", "model", "train", "render"}, "root");
    RunConfig c;
    c.seed = j.value("seed", uint64_t(0));
    c.threads = j.value("threads", 0);
    c.data_dir = j.value("data_dir", std::string());

    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        detail::reject_unknown(d,
                               {"views", "train_frames", "holdout_frames", "width", "height",
                                "rig_vertices", "rig_joints", "subdiv", "truth_disp_amp"},
                               "dataset");
        c.dataset.views = d.value("views", c.dataset.views);
        c.dataset.train_frames = d.value("train_frames", c.dataset.train_frames);
        c.dataset.holdout_frames = d.value("holdout_frames", c.dataset.holdout_frames);
        c.dataset.width = d.value("width", c.dataset.width);
        c.dataset.height = d.value("height", c.dataset.height);
        c.dataset.rig_vertices = d.value("rig_vertices", c.dataset.rig_vertices);
        c.dataset.rig_joints = d.value("rig_joints", c.dataset.rig_joints);
        c.dataset.subdiv = d.value("subdiv", c.dataset.subdiv);
        c.dataset.truth_disp_amp = d.value("truth_disp_amp", c.dataset.truth_disp_amp);
        c.dataset.seed = c.seed;
    }
    if (j.contains("model")) {
        const auto& m = j["model"];
        detail::reject_unknown(m,
                               {"variant", "dec_lbs", "dec_disp", "dec_albedo", "q_latent",
                                "implicit_dim", "neural_depth", "neural_width", "neural_skip",
                                "freq_x", "freq_d", "q_render"},
                               "model");
        c.variant = m.value("variant", c.variant);
        if (c.variant != "main" && c.variant != "supp")
            throw ConfigError("config: model.variant must be \"main\" or \"supp\"");
        c.model = ModelSpec::from_json(m);
        // the supplementary text swaps the deep decoder onto the albedo module
        if (c.variant == "supp" && !m.contains("dec_disp") && !m.contains("dec_albedo")) {
            c.model.dec_disp = {5, 128};
            c.model.dec_albedo = {8, 512};
        }
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        detail::reject_unknown(t,
                               {"lr", "stage_init_iters", "stage_embed_epochs",
                                "stage_neural_epochs", "update_avg_every", "checkpoint_every",
                                "joint_neural", "lambda", "omega", "alpha1", "alpha2", "alpha3",
                                "plap_albedo", "plap_disp"},
                               "train");
        c.adam.lr = t.value("lr", c.adam.lr);
        c.schedule.stage_init_iters = t.value("stage_init_iters", c.schedule.stage_init_iters);
        c.schedule.stage_embed_epochs =
            t.value("stage_embed_epochs", c.schedule.stage_embed_epochs);
        c.schedule.stage_neural_epochs =
            t.value("stage_neural_epochs", c.schedule.stage_neural_epochs);
        c.schedule.update_avg_every = t.value("update_avg_every", c.schedule.update_avg_every);
        c.schedule.checkpoint_every = t.value("checkpoint_every", c.schedule.checkpoint_every);
        c.schedule.joint_neural = t.value("joint_neural", c.schedule.joint_neural);
        c.weights.lambda = t.value("lambda", c.weights.lambda);
        c.weights.omega = t.value("omega", c.weights.omega);
        c.weights.alpha1 = t.value("alpha1", c.weights.alpha1);
        c.weights.alpha2 = t.value("alpha2", c.weights.alpha2);
        c.weights.alpha3 = t.value("alpha3", c.weights.alpha3);
        auto plap = [&](const char* key, PLapSpec& spec) {
            if (!t.contains(key)) return;
            detail::reject_unknown(t[key], {"quantile", "gamma1", "gamma2"}, key);
            spec.quantile = t[key].value("quantile", spec.quantile);
            spec.gamma1 = t[key].value("gamma1", spec.gamma1);
            spec.gamma2 = t[key].value("gamma2", spec.gamma2);
        };
        plap("plap_albedo", c.weights.plap_albedo);
        plap("plap_disp", c.weights.plap_disp);
        if (c.weights.lambda < 0 || c.weights.lambda > 1 || c.weights.omega < 0 ||
            c.weights.omega > 1)
            throw ConfigError("config: lambda and omega must lie in [0,1]");
        if (c.weights.alpha1 < 0 || c.weights.alpha2 < 0 || c.weights.alpha3 < 0)
            throw ConfigError("config: loss weights must be non-negative");
    }
    if (j.contains("render")) {
        detail::reject_unknown(j["render"], {"background"}, "render");
        c.background = j["render"].value("background", 0.0);
    }
    return c;
}

inline RunConfig RunConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const std::exception& e) {
        throw ConfigError(format_msg("config: parse failure in ", path, ": ", e.what()));
    }
    return from_json(j);
}

inline void RunConfig::save(const std::string& path) const {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream os(path);
    if (!os) throw ConfigError("config: cannot write " + path);
    os << to_json().dump(1) << "\n";
}

}  // namespace palm
