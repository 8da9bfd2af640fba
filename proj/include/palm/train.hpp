#pragma once

// The three-stage optimization: first-frame initialization fit, feature-
// embedding training under the inverse-rendering loss, and neural-renderer
// training (jointly with the embeddings by default). One (frame, view) pair
// per optimizer step, deterministic for a fixed seed regardless of threads.

#include "palm/avatar.hpp"
#include "palm/dataset.hpp"

#include <chrono>
#include <functional>

namespace palm {

struct TrainSchedule {
    int stage_init_iters = 600;
    int stage_embed_epochs = 300;
    int stage_neural_epochs = 300;
    int update_avg_every = 50;
    int checkpoint_every = 100;
    bool joint_neural = true;
};

// dataset loaded into tensors: targets are {H,W,3}, masks {H*W,1}
struct SceneData {
    int width = 0, height = 0;
    std::vector<Camera> cameras;
    struct FrameData {
        int index = 0;
        Pose pose;
        std::vector<Tensor> targets;
        std::vector<Tensor> masks;
    };
    std::vector<FrameData> train, holdout;
};

inline SceneData load_scene(const Dataset& ds) {
    SceneData sc;
    sc.width = ds.cfg.width;
    sc.height = ds.cfg.height;
    sc.cameras = ds.cameras;
    auto load_frames = [&](const std::vector<DatasetFrame>& src,
                           std::vector<SceneData::FrameData>& dst) {
        for (const auto& f : src) {
            SceneData::FrameData fd;
            fd.index = f.index;
            fd.pose = f.pose;
            for (size_t i = 0; i < f.view_paths.size(); ++i) {
                Image img = load_png(f.view_paths[i]);
                if (img.width != sc.width || img.height != sc.height)
                    throw DataError("load_scene: image resolution mismatch: " + f.view_paths[i]);
                if (img.channels != 3) throw DataError("load_scene: expected RGB view images");
                fd.targets.push_back(tensor_from_image(img));
                Image mask = load_png(f.mask_paths[i]);
                if (mask.width != sc.width || mask.height != sc.height)
                    throw DataError("load_scene: mask resolution mismatch: " + f.mask_paths[i]);
                Tensor m = Tensor::zeros({sc.width * sc.height, 1});
                for (int64_t p = 0; p < m.size(); ++p)
                    (*m.data)[size_t(p)] = mask.data[size_t(p) * size_t(mask.channels)];
                fd.masks.push_back(std::move(m));
            }
            dst.push_back(std::move(fd));
        }
    };
    load_frames(ds.train, sc.train);
    load_frames(ds.holdout, sc.holdout);
    if (sc.train.empty()) throw DataError("load_scene: no training frames");
    return sc;
}

// CSV log: one row per epoch (or init iteration)
class TrainLogger {
public:
    explicit TrainLogger(const std::string& path, bool append) {
        namespace fs = std::filesystem;
        fs::create_directories(fs::path(path).parent_path());
        bool write_header = !append || !fs::exists(path);
        os_.open(path, append ? std::ios::app : std::ios::trunc);
        if (!os_) throw DataError("TrainLogger: cannot open " + path);
        if (write_header)
            os_ << "epoch,stage,L_rgb,L_pLap_rho,L_pLap_D,L_mask,L_e,L_d,L_neu,wall_ms\n";
    }
    void row(int epoch, const std::string& stage, double rgb, double plap_rho, double plap_d,
             double mask, double edge, double disp, double neu, double wall_ms) {
        char line[320];
        std::snprintf(line, sizeof line, "%d,%s,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.1f",
                      epoch, stage.c_str(), rgb, plap_rho, plap_d, mask, edge, disp, neu,
                      wall_ms);
        os_ << line << "\n";
        os_.flush();
    }

private:
    std::ofstream os_;
};

namespace detail {

inline void check_finite(double v, const char* term, const std::string& where) {
    if (!std::isfinite(v))
        throw NumericalError(format_msg("non-finite ", term, " at ", where));
}

inline double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

inline Tensor light_tensor(const SHLight& l) {
    Tensor t = Tensor::zeros({9, 1});
    for (int k = 0; k < 9; ++k) (*t.data)[size_t(k)] = l.g[size_t(k)];
    return t;
}

}  // namespace detail

// ---- stage 1: first-frame fit of D, rho and per-view lights ----

struct InitResult {
    MatX disp;    // fitted V' x 3
    MatX albedo;  // fitted V' x 3
};

inline InitResult stage_init(Avatar& av, const SceneData& sc, int iters, const AdamConfig& adam_cfg,
                             TrainLogger* log = nullptr) {
    const auto& frame = sc.train.front();  // t = 1
    const int V = av.vertex_count();
    const int views = int(sc.cameras.size());

    // rho starts at the mean foreground color, lights at matching ambient
    Vec3 mean_fg = Vec3::Zero();
    int64_t fg_count = 0;
    for (int i = 0; i < views; ++i) {
        const Tensor& img = frame.targets[size_t(i)];
        const Tensor& mask = frame.masks[size_t(i)];
        for (int64_t p = 0; p < mask.size(); ++p) {
            if ((*mask.data)[size_t(p)] <= 0.5) continue;
            for (int c = 0; c < 3; ++c) mean_fg[c] += (*img.data)[size_t(p) * 3 + size_t(c)];
            ++fg_count;
        }
    }
    if (fg_count == 0) throw DataError("stage_init: no foreground pixels in any view");
    mean_fg /= double(fg_count);

    Tensor disp = Tensor::zeros({V, 3});
    Tensor albedo = Tensor::zeros({V, 3});
    for (int v = 0; v < V; ++v)
        for (int c = 0; c < 3; ++c) albedo(v, c) = mean_fg[c];

    std::vector<Tensor> lights;
    double mean_albedo = mean_fg.mean();
    for (int i = 0; i < views; ++i) {
        const Tensor& img = frame.targets[size_t(i)];
        const Tensor& mask = frame.masks[size_t(i)];
        double fg = 0;
        int64_t n = 0;
        for (int64_t p = 0; p < mask.size(); ++p)
            if ((*mask.data)[size_t(p)] > 0.5) {
                for (int c = 0; c < 3; ++c) fg += (*img.data)[size_t(p) * 3 + size_t(c)];
                n += 3;
            }
        double shading = n > 0 ? (fg / double(n)) / std::max(mean_albedo, 1e-6) : 1.0;
        lights.push_back(detail::light_tensor(ambient_light(shading)));
    }

    auto transforms =
        std::make_shared<const std::vector<Mat4>>(forward_kinematics(av.fine, frame.pose));
    Tensor rest = Tensor::from_matrix(av.fine.template_mesh.positions_matrix());
    Tensor weights = Tensor::from_matrix(av.fine.lbs_weights);

    std::vector<Tensor*> params = {&disp, &albedo};
    for (auto& l : lights) params.push_back(&l);
    AdamState adam;
    adam.cfg = adam_cfg;
    adam.init(params);

    for (int iter = 0; iter < iters; ++iter) {
        double t0 = detail::now_ms();
        Tape tape;
        Tensor d_w = tape.watch(disp);
        Tensor a_w = tape.watch(albedo);
        std::vector<Tensor> l_w;
        for (auto& l : lights) l_w.push_back(tape.watch(l));

        Tensor positions = op_skin_lbs(add(rest, d_w), weights, transforms);
        Tensor photometric = Tensor::scalar(0.0);
        for (int i = 0; i < views; ++i) {
            DiffRender dr = diff_render_lambert(sc.cameras[size_t(i)], av.fine.template_mesh,
                                                av.rt, positions, a_w, l_w[size_t(i)]);
            Tensor l1 = dr.covered->empty()
                            ? Tensor::scalar(0.0)
                            : mean(abs(sub(gather_rows(reshape(frame.targets[size_t(i)],
                                                               {sc.width * sc.height, 3}),
                                                       dr.covered),
                                           dr.rgb_px)));
            photometric = add(photometric, l1);
        }
        Tensor lap_d = sum(abs(op_laplacian_apply(av.lap, d_w)));
        Tensor lap_a = sum(abs(op_laplacian_apply(av.lap, a_w)));
        Tensor total = add(photometric, add(lap_d, lap_a));

        detail::check_finite(photometric.scalar_value(), "L_rgb",
                             "stage_init iter " + std::to_string(iter));
        detail::check_finite(total.scalar_value(), "L_init",
                             "stage_init iter " + std::to_string(iter));

        auto grads = tape.backward(total);
        std::vector<const std::vector<double>*> gptrs;
        std::vector<Tensor*> watched = {&d_w, &a_w};
        for (auto& l : l_w) watched.push_back(&l);
        for (auto* w : watched) {
            auto it = grads.find(w->node);
            gptrs.push_back(it == grads.end() ? nullptr : &it->second);
        }
        adam_step(adam, params, gptrs);

        if (log)
            log->row(iter, "init", photometric.scalar_value(), lap_a.scalar_value(),
                     lap_d.scalar_value(), 0, 0, 0, 0, detail::now_ms() - t0);
    }

    av.lights.clear();
    for (const auto& l : lights) {
        SHLight sh;
        for (int k = 0; k < 9; ++k) sh.g[size_t(k)] = (*l.data)[size_t(k)];
        av.lights.push_back(sh);
    }
    InitResult res{disp.mat(), albedo.mat()};
    init_from_fit(av.mods.disp, res.disp);
    MatX rho_clamped = res.albedo.cwiseMax(0.0).cwiseMin(1.0);
    init_from_fit(av.mods.albedo, rho_clamped);
    init_from_fit(av.mods.lbs, av.fine.lbs_weights);
    return res;
}

// ---- stage 2: feature-embedding training ----

struct StepProbe {
    // called after every optimizer step with the predicted weights
    std::function<void(const Avatar&, const Tensor& lbs_weights)> fn;
};

struct EmbedStepTerms {
    double rgb = 0, plap_rho = 0, plap_d = 0, mask = 0, edge = 0, disp = 0;
};

// single (frame, view) inverse-rendering step; shared by stages 2 and 3
inline EmbedStepTerms embed_step_loss(Avatar& av, const SceneData& sc,
                                      const SceneData::FrameData& frame, int view,
                                      const LossWeights& lw, Tape& tape,
                                      const EmbeddingParams& p_lbs, const EmbeddingParams& p_disp,
                                      const EmbeddingParams& p_albedo, Tensor& total_out,
                                      Tensor* lbs_weights_out = nullptr,
                                      std::shared_ptr<const FragmentBuffer>* frag_out = nullptr,
                                      Tensor* positions_out = nullptr,
                                      const std::string& where = "") {
    Tensor theta = pose_to_row(frame.pose);
    PredictedFeatures feat = predict_all(av.mods, p_lbs, p_disp, p_albedo, theta,
                                         av.fine.lbs_weights);
    auto transforms =
        std::make_shared<const std::vector<Mat4>>(forward_kinematics(av.fine, frame.pose));
    Tensor rest = Tensor::from_matrix(av.fine.template_mesh.positions_matrix());
    Tensor positions = op_skin_lbs(add(rest, feat.disp), feat.weights, transforms);
    DiffRender dr = diff_render_lambert(sc.cameras[size_t(view)], av.fine.template_mesh, av.rt,
                                        positions, feat.albedo,
                                        detail::light_tensor(av.lights[size_t(view)]),
                                        &frame.masks[size_t(view)]);
    Tensor target_crop = crop_constant(frame.targets[size_t(view)], dr.crop);
    const int64_t total_windows = int64_t(sc.height - 10) * int64_t(sc.width - 10);
    Tensor rgb = loss_rgb_windows(dr.rgb_full, target_crop, lw.lambda, dr.covered_local,
                                  total_windows);
    RegTerms reg = loss_reg_terms({feat.albedo, feat.disp, positions, dr.alpha_img,
                                   frame.masks[size_t(view)], av.rest_edges},
                                  av.lap, av.rt, lw);
    total_out = add(rgb, reg.total());

    EmbedStepTerms terms;
    terms.rgb = rgb.scalar_value();
    terms.plap_rho = reg.plap_albedo.scalar_value();
    terms.plap_d = reg.plap_disp.scalar_value();
    terms.mask = reg.mask.scalar_value();
    terms.edge = reg.edge.scalar_value();
    terms.disp = reg.disp.scalar_value();
    detail::check_finite(terms.rgb, "L_rgb", where);
    detail::check_finite(terms.plap_rho, "L_pLap(rho)", where);
    detail::check_finite(terms.plap_d, "L_pLap(D)", where);
    detail::check_finite(terms.mask, "L_mask", where);
    detail::check_finite(terms.edge, "L_e", where);
    detail::check_finite(terms.disp, "L_d", where);

    if (lbs_weights_out) *lbs_weights_out = feat.weights;
    if (frag_out) *frag_out = dr.frag;
    if (positions_out) *positions_out = positions;
    return terms;
}

inline void run_update_average(Avatar& av, const SceneData& sc) {
    std::vector<Pose> poses;
    for (const auto& f : sc.train) poses.push_back(f.pose);
    update_average(av.mods.lbs, mean_offsets(av.mods.lbs, poses));
    update_average(av.mods.disp, mean_offsets(av.mods.disp, poses));
    update_average(av.mods.albedo, mean_offsets(av.mods.albedo, poses));
}

inline void stage_embed(Avatar& av, const SceneData& sc, TrainState& state,
                        const TrainSchedule& sched, const LossWeights& lw,
                        const AdamConfig& adam_cfg, TrainLogger* log,
                        const std::string& ckpt_dir = "", const StepProbe* probe = nullptr,
                        int max_steps = -1) {
    std::vector<std::pair<std::string, Tensor*>> named;
    collect_embed_params(av.mods, named);
    std::vector<Tensor*> params;
    std::vector<std::string> names;
    for (auto& [n, p] : named) {
        names.push_back(n);
        params.push_back(p);
    }
    if (state.stage != "embed") {
        state.stage = "embed";
        state.epoch = 0;
        state.adam = AdamState{};
        state.adam.cfg = adam_cfg;
        state.adam.init(params);
        state.adam_param_names = names;
    } else if (state.adam_param_names != names) {
        throw DataError("stage_embed: checkpoint parameter list mismatch");
    }

    int steps_done = 0;
    for (int epoch = state.epoch; epoch < sched.stage_embed_epochs; ++epoch) {
        if (epoch > 0 && sched.update_avg_every > 0 && epoch % sched.update_avg_every == 0)
            run_update_average(av, sc);

        double t0 = detail::now_ms();
        std::vector<std::pair<int, int>> pairs;
        for (int f = 0; f < int(sc.train.size()); ++f)
            for (int v = 0; v < int(sc.cameras.size()); ++v) pairs.emplace_back(f, v);
        Rng shuffle_rng(mix_seed(state.seed, 0xE0, uint64_t(epoch)));
        shuffle_rng.shuffle(pairs);

        EmbedStepTerms sums;
        for (const auto& [f, v] : pairs) {
            Tape tape;
            EmbeddingParams p_lbs = EmbeddingParams::watched(av.mods.lbs, tape);
            EmbeddingParams p_disp = EmbeddingParams::watched(av.mods.disp, tape);
            EmbeddingParams p_albedo = EmbeddingParams::watched(av.mods.albedo, tape);
            Tensor total, lbs_w;
            EmbedStepTerms terms = embed_step_loss(
                av, sc, sc.train[size_t(f)], v, lw, tape, p_lbs, p_disp, p_albedo, total, &lbs_w,
                nullptr, nullptr,
                format_msg("stage_embed epoch ", epoch, " frame ", sc.train[size_t(f)].index,
                           " view ", v));
            auto grads = tape.backward(total);

            // leaf_nodes() follows the canonical parameters() order
            std::vector<const std::vector<double>*> gptrs;
            for (const auto* p : {&p_lbs, &p_disp, &p_albedo})
                for (int id : p->leaf_nodes()) {
                    auto it = grads.find(id);
                    gptrs.push_back(it == grads.end() ? nullptr : &it->second);
                }
            adam_step(state.adam, params, gptrs);
            project_k_rows(av.mods.lbs);
            project_k_rows(av.mods.disp);
            project_k_rows(av.mods.albedo);
            if (probe && probe->fn) probe->fn(av, lbs_w);

            sums.rgb += terms.rgb;
            sums.plap_rho += terms.plap_rho;
            sums.plap_d += terms.plap_d;
            sums.mask += terms.mask;
            sums.edge += terms.edge;
            sums.disp += terms.disp;
            if (max_steps > 0 && ++steps_done >= max_steps) break;
        }
        double n = double(pairs.size());
        if (log)
            log->row(epoch, "embed", sums.rgb / n, sums.plap_rho / n, sums.plap_d / n,
                     sums.mask / n, sums.edge / n, sums.disp / n, 0,
                     detail::now_ms() - t0);
        state.epoch = epoch + 1;
        if (!ckpt_dir.empty() && sched.checkpoint_every > 0 &&
            state.epoch % sched.checkpoint_every == 0 &&
            state.epoch < sched.stage_embed_epochs)
            save_run_checkpoint(ckpt_dir + "/embed_" + std::to_string(state.epoch), av, state);
        if (max_steps > 0 && steps_done >= max_steps) break;
    }
    if (!ckpt_dir.empty()) save_run_checkpoint(ckpt_dir + "/embed_final", av, state);
}

// ---- stage 3: neural renderer (joint with embeddings by default) ----

inline void stage_neural(Avatar& av, const SceneData& sc, TrainState& state,
                         const TrainSchedule& sched, const LossWeights& lw,
                         const AdamConfig& adam_cfg, TrainLogger* log,
                         const std::string& ckpt_dir = "") {
    std::vector<std::pair<std::string, Tensor*>> named;
    collect_neural_params(av.neural, named);
    if (sched.joint_neural) collect_embed_params(av.mods, named);
    std::vector<Tensor*> params;
    std::vector<std::string> names;
    for (auto& [n, p] : named) {
        names.push_back(n);
        params.push_back(p);
    }
    if (state.stage != "neural") {
        state.stage = "neural";
        state.epoch = 0;
        state.adam = AdamState{};
        state.adam.cfg = adam_cfg;
        state.adam.init(params);
        state.adam_param_names = names;
    } else if (state.adam_param_names != names) {
        throw DataError("stage_neural: checkpoint parameter list mismatch");
    }

    for (int epoch = state.epoch; epoch < sched.stage_neural_epochs; ++epoch) {
        if (sched.joint_neural && epoch > 0 && sched.update_avg_every > 0 &&
            epoch % sched.update_avg_every == 0)
            run_update_average(av, sc);

        double t0 = detail::now_ms();
        std::vector<std::pair<int, int>> pairs;
        for (int f = 0; f < int(sc.train.size()); ++f)
            for (int v = 0; v < int(sc.cameras.size()); ++v) pairs.emplace_back(f, v);
        Rng shuffle_rng(mix_seed(state.seed, 0xF0, uint64_t(epoch)));
        shuffle_rng.shuffle(pairs);

        EmbedStepTerms sums;
        double neu_sum = 0;
        for (const auto& [f, v] : pairs) {
            const auto& frame = sc.train[size_t(f)];
            Tape tape;
            NeuralParams np = NeuralParams::watched(av.neural, tape);
            EmbeddingParams p_lbs, p_disp, p_albedo;

            Tensor total;
            std::shared_ptr<const FragmentBuffer> frag;
            Tensor positions;
            EmbedStepTerms terms;
            std::string where = format_msg("stage_neural epoch ", epoch, " frame ", frame.index,
                                           " view ", v);
            if (sched.joint_neural) {
                p_lbs = EmbeddingParams::watched(av.mods.lbs, tape);
                p_disp = EmbeddingParams::watched(av.mods.disp, tape);
                p_albedo = EmbeddingParams::watched(av.mods.albedo, tape);
                terms = embed_step_loss(av, sc, frame, v, lw, tape, p_lbs, p_disp, p_albedo,
                                        total, nullptr, &frag, &positions, where);
            } else {
                PredictedFeatures feat = predict_all(av.mods, frame.pose, av.fine.lbs_weights);
                auto transforms = std::make_shared<const std::vector<Mat4>>(
                    forward_kinematics(av.fine, frame.pose));
                positions = op_skin_lbs(
                    add(Tensor::from_matrix(av.fine.template_mesh.positions_matrix()), feat.disp),
                    feat.weights, transforms);
                frag = std::make_shared<const FragmentBuffer>(
                    rasterize(sc.cameras[size_t(v)], av.fine.template_mesh, positions.mat()));
            }

            CropBox box = loss_crop_box(*frag, frame.masks[size_t(v)], 10);
            MatX normals = vertex_normals(av.fine.template_mesh.faces, positions.mat());
            Tensor neural_img =
                neural_render(av.neural, np, sc.cameras[size_t(v)], frag, av.rt, positions.mat(),
                              normals, embed_latents(av), 0.0, &box);
            auto covered_local = std::make_shared<std::vector<int>>();
            for (int p : frag->covered) {
                int x = p % sc.width, y = p / sc.width;
                covered_local->push_back((y - box.y0) * box.width() + (x - box.x0));
            }
            Tensor target_crop = crop_constant(frame.targets[size_t(v)], box);
            Tensor l_neu = loss_rgb_windows(
                neural_img, target_crop, lw.omega,
                std::shared_ptr<const std::vector<int>>(covered_local),
                int64_t(sc.height - 10) * int64_t(sc.width - 10));
            detail::check_finite(l_neu.scalar_value(), "L_neu", where);
            neu_sum += l_neu.scalar_value();
            total = total.data ? add(total, l_neu) : l_neu;

            auto grads = tape.backward(total);

            // gradient pointers in `named` order: neural first, then embeds
            std::vector<const std::vector<double>*> gptrs;
            auto push_grad = [&](int node) {
                auto it = grads.find(node);
                gptrs.push_back(it == grads.end() ? nullptr : &it->second);
            };
            push_grad(np.Q_render.node);
            for (size_t i = 0; i < np.W.size(); ++i) {
                push_grad(np.W[i].node);
                push_grad(np.b[i].node);
            }
            if (sched.joint_neural) {
                for (const auto* p : {&p_lbs, &p_disp, &p_albedo})
                    for (int id : p->leaf_nodes()) push_grad(id);
            }
            adam_step(state.adam, params, gptrs);
            if (sched.joint_neural) {
                project_k_rows(av.mods.lbs);
                project_k_rows(av.mods.disp);
                project_k_rows(av.mods.albedo);
            }

            sums.rgb += terms.rgb;
            sums.plap_rho += terms.plap_rho;
            sums.plap_d += terms.plap_d;
            sums.mask += terms.mask;
            sums.edge += terms.edge;
            sums.disp += terms.disp;
        }
        double n = double(pairs.size());
        if (log)
            log->row(epoch, "neural", sums.rgb / n, sums.plap_rho / n, sums.plap_d / n,
                     sums.mask / n, sums.edge / n, sums.disp / n, neu_sum / n,
                     detail::now_ms() - t0);
        state.epoch = epoch + 1;
        if (!ckpt_dir.empty() && sched.checkpoint_every > 0 &&
            state.epoch % sched.checkpoint_every == 0 &&
            state.epoch < sched.stage_neural_epochs)
            save_run_checkpoint(ckpt_dir + "/neural_" + std::to_string(state.epoch), av, state);
    }
    if (!ckpt_dir.empty()) save_run_checkpoint(ckpt_dir + "/neural_final", av, state);
}

}  // namespace palm
