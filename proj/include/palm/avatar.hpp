#pragma once

// The trainable avatar: subdivided rig, three feature embedding modules, the
// neural renderer, and per-view lights, with named-parameter checkpointing.

#include "palm/checkpoint.hpp"
#include "palm/embed.hpp"
#include "palm/losses.hpp"
#include "palm/neural.hpp"
#include "palm/optimizer.hpp"

namespace palm {

struct ModelSpec {
    // pose decoders (depth includes the output layer)
    DecoderSpec dec_lbs{5, 128};
    DecoderSpec dec_disp{8, 512};
    DecoderSpec dec_albedo{5, 128};
    int q_latent = 10;
    int implicit_dim = 32;
    NeuralSpec neural{};  // 8 x 256, skip at 5, q_render 20

    static ModelSpec from_json(const nlohmann::json& j) {
        ModelSpec s;
        if (j.contains("dec_lbs")) s.dec_lbs = {j["dec_lbs"][0], j["dec_lbs"][1]};
        if (j.contains("dec_disp")) s.dec_disp = {j["dec_disp"][0], j["dec_disp"][1]};
        if (j.contains("dec_albedo")) s.dec_albedo = {j["dec_albedo"][0], j["dec_albedo"][1]};
        if (j.contains("q_latent")) s.q_latent = j["q_latent"];
        if (j.contains("implicit_dim")) s.implicit_dim = j["implicit_dim"];
        if (j.contains("neural_depth")) s.neural.depth = j["neural_depth"];
        if (j.contains("neural_width")) s.neural.width = j["neural_width"];
        if (j.contains("neural_skip")) s.neural.skip_layer = j["neural_skip"];
        if (j.contains("freq_x")) s.neural.freq_x = j["freq_x"];
        if (j.contains("freq_d")) s.neural.freq_d = j["freq_d"];
        if (j.contains("q_render")) s.neural.q_render = j["q_render"];
        return s;
    }
};

struct Avatar {
    Rig fine;  // subdivided rig
    RenderTopology rt;
    std::shared_ptr<const SparseLaplacian> lap;
    Eigen::VectorXd rest_edges;
    double x_scale = 0.18;

    ModelSpec spec;
    AvatarModules mods;
    NeuralRenderer neural;
    std::vector<SHLight> lights;  // per view

    int vertex_count() const { return fine.vertex_count(); }
    int joint_count() const { return fine.joint_count(); }
};

inline Avatar make_avatar(const Rig& base, int subdiv, int views, const ModelSpec& spec,
                          uint64_t seed) {
    Avatar av;
    av.fine = subdivide_rig(base, subdiv);
    av.rt = RenderTopology::from_mesh(av.fine.template_mesh);
    av.lap = std::make_shared<const SparseLaplacian>(laplacian(av.fine.template_mesh));
    av.rest_edges = edge_lengths(av.fine.template_mesh, av.fine.template_mesh.positions_matrix());
    av.spec = spec;
    const int V = av.fine.vertex_count();
    const int J = av.fine.joint_count();
    const int theta_dim = J * 3;
    av.mods.lbs = make_embedding(EmbeddingModule::Kind::lbs, V, theta_dim, J, spec.dec_lbs,
                                 mix_seed(seed, 1), spec.q_latent, spec.implicit_dim);
    av.mods.disp = make_embedding(EmbeddingModule::Kind::displacement, V, theta_dim, 3,
                                  spec.dec_disp, mix_seed(seed, 2), spec.q_latent,
                                  spec.implicit_dim);
    av.mods.albedo = make_embedding(EmbeddingModule::Kind::albedo, V, theta_dim, 3,
                                    spec.dec_albedo, mix_seed(seed, 3), spec.q_latent,
                                    spec.implicit_dim);
    init_from_fit(av.mods.lbs, av.fine.lbs_weights);

    double radius = 0.0;
    MatX pos = av.fine.template_mesh.positions_matrix();
    Eigen::RowVector3d centroid = pos.colwise().mean();
    for (int v = 0; v < V; ++v) radius = std::max(radius, (pos.row(v) - centroid).norm());
    av.x_scale = std::max(radius, 1e-9);

    av.neural = make_neural_renderer(V, 2 * spec.q_latent + spec.neural.q_render, av.x_scale,
                                     spec.neural, mix_seed(seed, 4));
    av.lights.assign(size_t(views), SHLight{});
    return av;
}

// vertex latents fed to the neural renderer as constants (detached)
inline MatX embed_latents(const Avatar& av) {
    MatX out(av.vertex_count(), 2 * av.spec.q_latent);
    out.leftCols(av.spec.q_latent) = av.mods.disp.Q.mat();
    out.rightCols(av.spec.q_latent) = av.mods.albedo.Q.mat();
    return out;
}

// ---- named parameters ----

inline void collect_embed_params(AvatarModules& mods,
                                 std::vector<std::pair<std::string, Tensor*>>& out) {
    auto add_module = [&](const char* tag, EmbeddingModule& m) {
        std::string base = std::string("embed.") + tag + ".";
        for (auto& [name, t] : m.parameters()) out.emplace_back(base + name, t);
    };
    add_module("lbs", mods.lbs);
    add_module("disp", mods.disp);
    add_module("albedo", mods.albedo);
}

inline void collect_neural_params(NeuralRenderer& nr,
                                  std::vector<std::pair<std::string, Tensor*>>& out) {
    out.emplace_back("neural.Q_render", &nr.Q_render);
    for (size_t i = 0; i < nr.W.size(); ++i) {
        out.emplace_back("neural.layer_" + std::to_string(i) + ".w", &nr.W[i]);
        out.emplace_back("neural.layer_" + std::to_string(i) + ".b", &nr.b[i]);
    }
}

// every persistent tensor, including non-trained state
inline std::vector<std::pair<std::string, Tensor*>> collect_all_tensors(Avatar& av) {
    std::vector<std::pair<std::string, Tensor*>> out;
    collect_embed_params(av.mods, out);
    out.emplace_back("embed.lbs.offset_shift", &av.mods.lbs.offset_shift);
    out.emplace_back("embed.disp.offset_shift", &av.mods.disp.offset_shift);
    out.emplace_back("embed.albedo.offset_shift", &av.mods.albedo.offset_shift);
    collect_neural_params(av.neural, out);
    return out;
}

// ---- training state ----

struct TrainState {
    std::string stage = "none";  // none | init | embed | neural
    int epoch = 0;               // completed epochs within the stage
    uint64_t seed = 0;
    AdamState adam;
    std::vector<std::string> adam_param_names;  // order of the moment slots
};

inline void save_run_checkpoint(const std::string& prefix, Avatar& av, const TrainState& state) {
    Checkpoint ck;
    ck.meta["stage"] = state.stage;
    ck.meta["epoch"] = state.epoch;
    ck.meta["seed"] = state.seed;
    ck.meta["adam_t"] = state.adam.t;
    ck.meta["adam_lr"] = state.adam.cfg.lr;
    ck.meta["adam_params"] = state.adam_param_names;
    ck.meta["vertices"] = av.vertex_count();
    ck.meta["joints"] = av.joint_count();

    for (auto& [name, t] : collect_all_tensors(av)) ck.tensors.emplace_back(name, *t);
    Tensor lights = Tensor::zeros({int(av.lights.size()), 9});
    for (size_t i = 0; i < av.lights.size(); ++i)
        for (int k = 0; k < 9; ++k) lights(int64_t(i), k) = av.lights[i].g[size_t(k)];
    ck.tensors.emplace_back("lights", lights);

    for (size_t i = 0; i < state.adam_param_names.size(); ++i) {
        const auto& name = state.adam_param_names[i];
        Tensor m = Tensor::from_vector(state.adam.m[i], {int(state.adam.m[i].size())});
        Tensor v = Tensor::from_vector(state.adam.v[i], {int(state.adam.v[i].size())});
        ck.tensors.emplace_back("adam.m." + name, std::move(m));
        ck.tensors.emplace_back("adam.v." + name, std::move(v));
    }
    ck.save(prefix);
}

inline TrainState load_run_checkpoint(const std::string& prefix, Avatar& av) {
    Checkpoint ck = Checkpoint::load(prefix);
    if (ck.meta.at("vertices").get<int>() != av.vertex_count() ||
        ck.meta.at("joints").get<int>() != av.joint_count())
        throw DataError("checkpoint: model dimensions do not match the configuration");
    for (auto& [name, t] : collect_all_tensors(av)) ck.restore_into(name, *t);
    const Tensor& lights = ck.at("lights");
    av.lights.assign(size_t(lights.rows()), SHLight{});
    for (int64_t i = 0; i < lights.rows(); ++i)
        for (int k = 0; k < 9; ++k) av.lights[size_t(i)].g[size_t(k)] = lights(i, k);

    TrainState state;
    state.stage = ck.meta.at("stage").get<std::string>();
    state.epoch = ck.meta.at("epoch").get<int>();
    state.seed = ck.meta.at("seed").get<uint64_t>();
    state.adam.cfg.lr = ck.meta.at("adam_lr").get<double>();
    state.adam.t = ck.meta.at("adam_t").get<int64_t>();
    state.adam_param_names = ck.meta.at("adam_params").get<std::vector<std::string>>();
    for (const auto& name : state.adam_param_names) {
        state.adam.m.push_back(*ck.at("adam.m." + name).data);
        state.adam.v.push_back(*ck.at("adam.v." + name).data);
    }
    return state;
}

}  // namespace palm
