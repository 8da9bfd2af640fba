#pragma once

// Evaluation: PSNR, SSIM (reused from the loss module), point-to-surface
// distance against the sealed truth, and frame-rate measurement of the
// frozen-model path.

#include "palm/inference.hpp"
#include "palm/train.hpp"

#include <chrono>
#include <iostream>

namespace palm {

struct PsnrResult {
    double db = 0.0;
    bool infinite = false;  // identical images
};

inline PsnrResult psnr(const Tensor& pred, const Tensor& target) {
    if (pred.shape != target.shape)
        throw NumericalError(format_msg("psnr: shape mismatch ", pred.shape_str(), " vs ",
                                        target.shape_str()));
    double mse = 0.0;
    for (int64_t i = 0; i < pred.size(); ++i) {
        double d = (*pred.data)[size_t(i)] - (*target.data)[size_t(i)];
        mse += d * d;
    }
    mse /= double(pred.size());
    if (mse == 0.0) return {0.0, true};
    return {10.0 * std::log10(1.0 / mse), false};
}

inline PsnrResult psnr(const Image& pred, const Image& target) {
    return psnr(tensor_from_image(pred), tensor_from_image(target));
}

// mean point-to-surface distance from predicted vertices to the truth mesh,
// in model units
inline double p2s(const MatX& pred_vertices, const TriMesh& truth_mesh) {
    if (pred_vertices.rows() == 0) throw DataError("p2s: empty prediction");
    Eigen::VectorXd d = point_to_surface(truth_mesh, pred_vertices);
    return d.mean();
}

struct EvalReport {
    double psnr_db = 0.0;
    bool psnr_infinite = false;
    double ssim_val = 0.0;
    double p2s_mean_mm = -1.0;           // -1 = not evaluated
    double p2s_template_mm = -1.0;       // undisplaced-template baseline
    double albedo_mae = -1.0;
    double fps = 0.0;
    double embed_ms = 0.0, raster_ms = 0.0, neural_ms = 0.0;
    std::string renderer = "lambert";
    std::string lpips = "n/a";

    nlohmann::json to_json() const {
        nlohmann::json j{{"psnr", psnr_infinite ? 1e9 : psnr_db},
                         {"psnr_infinite", psnr_infinite},
                         {"ssim", ssim_val},
                         {"fps", fps},
                         {"phase_ms",
                          {{"embedding_forward", embed_ms},
                           {"rasterize_shade", raster_ms},
                           {"neural", neural_ms}}},
                         {"renderer", renderer},
                         {"lpips", lpips}};
        if (p2s_mean_mm >= 0) j["p2s_mm"] = p2s_mean_mm;
        if (p2s_template_mm >= 0) j["p2s_template_mm"] = p2s_template_mm;
        if (albedo_mae >= 0) j["albedo_mae"] = albedo_mae;
        return j;
    }

    void print_table(std::ostream& os) const {
        char line[128];
        os << "metric            value\n";
        os << "----------------  ---------------\n";
        if (psnr_infinite)
            os << "psnr (dB)         inf (identical)\n";
        else {
            std::snprintf(line, sizeof line, "psnr (dB)         %.3f", psnr_db);
            os << line << "\n";
        }
        std::snprintf(line, sizeof line, "ssim              %.5f", ssim_val);
        os << line << "\n";
        if (p2s_mean_mm >= 0) {
            std::snprintf(line, sizeof line, "p2s (mm)          %.4f", p2s_mean_mm);
            os << line << "\n";
        }
        if (p2s_template_mm >= 0) {
            std::snprintf(line, sizeof line, "p2s template (mm) %.4f", p2s_template_mm);
            os << line << "\n";
        }
        if (albedo_mae >= 0) {
            std::snprintf(line, sizeof line, "albedo mae        %.5f", albedo_mae);
            os << line << "\n";
        }
        std::snprintf(line, sizeof line, "fps               %.1f", fps);
        os << line << "\n";
        std::snprintf(line, sizeof line,
                      "phase ms          embed %.2f | raster %.2f | neural %.2f", embed_ms,
                      raster_ms, neural_ms);
        os << line << "\n";
        os << "lpips             " << lpips << "\n";
    }
};

// render a frame with the trained avatar (f64 path)
inline Image render_avatar_view(Avatar& av, const Camera& cam, const Pose& pose,
                                const std::string& renderer, const SHLight* light_override,
                                MatX* positions_out = nullptr) {
    PredictedFeatures feat = predict_all(av.mods, pose, av.fine.lbs_weights);
    MatX positions = skin_lbs(
        MatX(av.fine.template_mesh.positions_matrix() + feat.disp.mat()), feat.weights.mat(),
        forward_kinematics(av.fine, pose), {}, av.fine.shape_basis);
    if (positions_out) *positions_out = positions;
    if (renderer == "neural") {
        FrozenAvatar fz = freeze(av);
        FragmentBuffer frag = rasterize(cam, av.fine.template_mesh, positions);
        return neural_render_frozen(fz, cam, frag, positions);
    }
    SHLight light = light_override ? *light_override
                                   : (av.lights.empty() ? ambient_light(0.85) : av.lights[0]);
    auto [img, mask] =
        render_lambert(cam, av.fine.template_mesh, positions, feat.albedo.mat(), light);
    return img;
}

// PSNR/SSIM over held-out frames and views; per-view trained lights are used
// for the Lambertian renderer.
inline EvalReport eval_images(Avatar& av, const SceneData& sc, const std::string& renderer,
                              const std::vector<SceneData::FrameData>& frames) {
    EvalReport rep;
    rep.renderer = renderer;
    if (frames.empty()) throw DataError("eval_images: no frames");
    FrozenAvatar fz = freeze(av);
    double psnr_acc = 0, ssim_acc = 0;
    int count = 0;
    bool any_inf = false;
    for (const auto& frame : frames) {
        PredictedFeatures feat = predict_all(av.mods, frame.pose, av.fine.lbs_weights);
        MatX positions = skin_lbs(
            MatX(av.fine.template_mesh.positions_matrix() + feat.disp.mat()), feat.weights.mat(),
            forward_kinematics(av.fine, frame.pose), {}, av.fine.shape_basis);
        for (size_t v = 0; v < sc.cameras.size(); ++v) {
            Image img;
            if (renderer == "neural") {
                FragmentBuffer frag =
                    rasterize(sc.cameras[v], av.fine.template_mesh, positions);
                img = neural_render_frozen(fz, sc.cameras[v], frag, positions);
            } else {
                auto [limg, mask] = render_lambert(sc.cameras[v], av.fine.template_mesh,
                                                   positions, feat.albedo.mat(),
                                                   av.lights[v]);
                img = limg;
            }
            Tensor pred = tensor_from_image(img);
            auto pr = psnr(pred, frame.targets[v]);
            any_inf |= pr.infinite;
            psnr_acc += pr.infinite ? 100.0 : pr.db;
            ssim_acc += ssim(pred, frame.targets[v]).scalar_value();
            ++count;
        }
    }
    rep.psnr_db = psnr_acc / count;
    rep.psnr_infinite = any_inf;
    rep.ssim_val = ssim_acc / count;
    return rep;
}

// geometry recovery against the sealed truth at held-out poses
inline void eval_geometry(Avatar& av, const Dataset& ds, int max_frames, EvalReport& rep) {
    Rig base = load_rig(ds.rig_dir());
    Rig fine = subdivide_rig(base, ds.cfg.subdiv);
    double pred_acc = 0, tmpl_acc = 0;
    int count = 0;
    for (const auto& frame : ds.holdout) {
        if (count >= max_frames) break;
        MatX truth_disp = load_truth_disp(ds, frame.index, fine.vertex_count());
        MatX truth_pos = pose_mesh_fine(fine, truth_disp, fine.lbs_weights, frame.pose, {});
        TriMesh truth_mesh = fine.template_mesh;
        for (int v = 0; v < fine.vertex_count(); ++v)
            truth_mesh.vertices[size_t(v)] = truth_pos.row(v);

        PredictedFeatures feat = predict_all(av.mods, frame.pose, av.fine.lbs_weights);
        MatX pred = skin_lbs(
            MatX(av.fine.template_mesh.positions_matrix() + feat.disp.mat()), feat.weights.mat(),
            forward_kinematics(av.fine, frame.pose), {}, av.fine.shape_basis);
        MatX tmpl = pose_mesh_fine(fine, MatX::Zero(fine.vertex_count(), 3), fine.lbs_weights,
                                   frame.pose, {});
        pred_acc += p2s(pred, truth_mesh);
        tmpl_acc += p2s(tmpl, truth_mesh);
        ++count;
    }
    // model units are meters; reports carry millimeters
    rep.p2s_mean_mm = pred_acc / count * 1000.0;
    rep.p2s_template_mm = tmpl_acc / count * 1000.0;
}

inline void eval_albedo(Avatar& av, const Dataset& ds, EvalReport& rep) {
    MatX truth = load_truth_albedo(ds, av.vertex_count());
    rep.albedo_mae = (av.mods.albedo.f_bar.mat() - truth).cwiseAbs().mean();
}

// median wall time per frame over a pose sequence, with per-phase breakdown
inline void bench_fps(const FrozenAvatar& fz, const std::vector<Pose>& poses, const Camera& cam,
                      int frames, int warmup, EvalReport& rep) {
    if (poses.empty()) throw DataError("bench_fps: no poses");
    auto tick = [] {
        return std::chrono::duration<double, std::milli>(
                   std::chrono::steady_clock::now().time_since_epoch())
            .count();
    };
    std::vector<double> total_ms, embed_ms, raster_ms, neural_ms;
    for (int i = 0; i < warmup + frames; ++i) {
        const Pose& pose = poses[size_t(i) % poses.size()];
        double t0 = tick();
        PosedResult posed = pose_to_mesh(fz, pose, true);
        double t1 = tick();
        FragmentBuffer frag = rasterize(cam, fz.topo, posed.positions);
        MatX normals = vertex_normals(fz.topo.faces, posed.positions);
        Image n_px = interpolate(frag, normals, fz.topo.faces);
        Image a_px = interpolate(frag, posed.albedo.cast<double>(), fz.topo.faces);
        Image lambert = shade_lambert(a_px, fz.lights.empty() ? ambient_light(0.85) : fz.lights[0],
                                      n_px, frag);
        double t2 = tick();
        Image img = neural_render_frozen(fz, cam, frag, posed.positions);
        double t3 = tick();
        if (i >= warmup) {
            embed_ms.push_back(t1 - t0);
            raster_ms.push_back(t2 - t1);
            neural_ms.push_back(t3 - t2);
            total_ms.push_back(t3 - t0);
        }
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    rep.embed_ms = median(embed_ms);
    rep.raster_ms = median(raster_ms);
    rep.neural_ms = median(neural_ms);
    rep.fps = 1000.0 / median(total_ms);
}

}  // namespace palm
