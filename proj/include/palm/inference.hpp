#pragma once

// Frozen-model inference in float32: pose -> fine mesh (embedding forward +
// skinning) and the per-pixel neural render. The first decoder layer is split
// so the pose-dependent part is computed once per pose instead of per vertex.

#include "palm/avatar.hpp"

namespace palm {

using MatXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FrozenEmbedding {
    MatXf f_bar_eff;  // f_bar - offset_shift
    MatXf Q;          // V x q
    MatXf K;          // m x n
    MatXf theta_w0;   // theta_dim x width (first-layer split)
    MatXf q_w0;       // q x width
    std::vector<MatXf> W;  // layers 1..depth-1
    std::vector<Eigen::RowVectorXf> b;  // all layers

    // out = f_bar_eff + softplus-MLP([theta; Q]) * K
    MatXf forward(const Eigen::RowVectorXf& theta) const {
        Eigen::RowVectorXf first = theta * theta_w0 + b[0];
        MatXf h = Q * q_w0;
        h.rowwise() += first;
        auto softplus_inplace = [](MatXf& x) {
            float* p = x.data();
            for (int64_t i = 0; i < x.size(); ++i) {
                float v = p[i];
                p[i] = std::log1p(std::exp(-std::abs(v))) + std::max(v, 0.0f);
            }
        };
        for (size_t l = 0; l < W.size(); ++l) {
            softplus_inplace(h);
            MatXf next(h.rows(), W[l].cols());
            parallel_blocks(h.rows(), 512, [&](int64_t r0, int64_t r1) {
                next.middleRows(r0, r1 - r0).noalias() = h.middleRows(r0, r1 - r0) * W[l];
            });
            next.rowwise() += b[l + 1];
            h = std::move(next);
        }
        MatXf out(h.rows(), K.cols());
        parallel_blocks(h.rows(), 512, [&](int64_t r0, int64_t r1) {
            out.middleRows(r0, r1 - r0).noalias() = h.middleRows(r0, r1 - r0) * K;
        });
        return out + f_bar_eff;
    }
};

struct FrozenAvatar {
    // rig
    TriMesh topo;           // faces + rest mesh (f64, for rasterization)
    RenderTopology rt;
    MatXf rest;             // V x 3
    MatXf template_weights; // V x J
    MatX joints;            // FK stays f64 (tiny)
    std::vector<int> parents;

    FrozenEmbedding lbs, disp, albedo;

    // neural renderer
    NeuralSpec nspec;
    std::vector<MatXf> nW;
    std::vector<Eigen::RowVectorXf> nb;
    MatXf latents;  // V x (2q + q_render), embed latents + Q_render
    double x_scale = 1.0;

    std::vector<SHLight> lights;
    int joint_count() const { return int(parents.size()); }
    int vertex_count() const { return int(rest.rows()); }
};

namespace detail {

inline MatXf to_f32m(const MatX& m) {
    return m.cast<float>();
}
inline MatXf to_f32m(const Tensor& t) {
    return t.mat().cast<float>();
}

inline FrozenEmbedding freeze_embedding(const EmbeddingModule& m) {
    FrozenEmbedding f;
    f.f_bar_eff = to_f32m(MatX(m.f_bar.mat() - m.offset_shift.mat()));
    f.Q = to_f32m(m.Q);
    f.K = to_f32m(m.K);
    f.theta_w0 = to_f32m(m.W0_theta);
    f.q_w0 = to_f32m(m.W0_q);
    for (const auto& w : m.W) f.W.push_back(to_f32m(w));
    for (const auto& b : m.b) f.b.emplace_back(to_f32m(b).row(0));
    return f;
}

}  // namespace detail

inline FrozenAvatar freeze(const Avatar& av) {
    FrozenAvatar f;
    f.topo = av.fine.template_mesh;
    f.rt = av.rt;
    f.rest = detail::to_f32m(av.fine.template_mesh.positions_matrix());
    f.template_weights = detail::to_f32m(av.fine.lbs_weights);
    f.joints = av.fine.joints;
    f.parents = av.fine.parents;
    f.lbs = detail::freeze_embedding(av.mods.lbs);
    f.disp = detail::freeze_embedding(av.mods.disp);
    f.albedo = detail::freeze_embedding(av.mods.albedo);
    f.nspec = av.neural.spec;
    for (const auto& w : av.neural.W) f.nW.push_back(detail::to_f32m(w));
    for (const auto& b : av.neural.b) f.nb.emplace_back(detail::to_f32m(b).row(0));
    MatX lat(av.vertex_count(), 2 * av.spec.q_latent + av.spec.neural.q_render);
    lat.leftCols(2 * av.spec.q_latent) = embed_latents(const_cast<Avatar&>(av));
    lat.rightCols(av.spec.neural.q_render) = av.neural.Q_render.mat();
    f.latents = detail::to_f32m(lat);
    f.x_scale = av.x_scale;
    f.lights = av.lights;
    return f;
}

struct PosedResult {
    MatX positions;  // V x 3 (f64 for rasterization)
    MatXf weights;   // predicted, normalized
    MatXf albedo;    // clamped [0,1]
};

inline Eigen::RowVectorXf theta_row_f32(const Pose& pose) {
    Eigen::RowVectorXf t(pose.theta.rows() * 3);
    for (int j = 0; j < pose.theta.rows(); ++j)
        for (int c = 0; c < 3; ++c) t[j * 3 + c] = float(pose.theta(j, c));
    return t;
}

// embedding forward + skinning; the paper's real-time pose-to-mesh path
inline PosedResult pose_to_mesh(const FrozenAvatar& f, const Pose& pose,
                                bool with_albedo = false) {
    Eigen::RowVectorXf theta = theta_row_f32(pose);
    MatXf w_raw = f.lbs.forward(theta);
    MatXf d = f.disp.forward(theta);
    PosedResult out;
    if (with_albedo)
        out.albedo = f.albedo.forward(theta).cwiseMax(0.0f).cwiseMin(1.0f);

    // clamp + row-normalize with template fallback
    out.weights = w_raw.cwiseMax(0.0f);
    for (int64_t v = 0; v < out.weights.rows(); ++v) {
        float s = out.weights.row(v).sum();
        if (s > 1e-8f)
            out.weights.row(v) /= s;
        else
            out.weights.row(v) = f.template_weights.row(v);
    }

    // FK in f64 (J is tiny), skinning in f32
    Rig stub;
    stub.joints = f.joints;
    stub.parents = f.parents;
    auto transforms = forward_kinematics(stub, pose);
    std::vector<Eigen::Matrix<float, 3, 4>> T(transforms.size());
    for (size_t j = 0; j < transforms.size(); ++j)
        T[j] = transforms[j].topRows<3>().cast<float>();

    const int64_t V = f.rest.rows();
    const int J = int(T.size());
    out.positions.resize(V, 3);
    parallel_blocks(V, 1024, [&](int64_t v0, int64_t v1) {
        for (int64_t v = v0; v < v1; ++v) {
            Eigen::Vector3f p = f.rest.row(v) + d.row(v);
            Eigen::Vector3f acc = Eigen::Vector3f::Zero();
            for (int j = 0; j < J; ++j) {
                float w = out.weights(v, j);
                if (w == 0.0f) continue;
                acc += w * (T[size_t(j)].leftCols<3>() * p + T[size_t(j)].col(3));
            }
            out.positions.row(v) = acc.cast<double>().transpose();
        }
    });
    return out;
}

// f32 per-pixel MLP over covered fragments
inline Image neural_render_frozen(const FrozenAvatar& f, const Camera& cam,
                                  const FragmentBuffer& frag, const MatX& positions,
                                  double background = 0.0) {
    Image out(cam.width, cam.height, 3);
    if (background != 0.0) std::fill(out.data.begin(), out.data.end(), background);
    const int64_t P = int64_t(frag.covered.size());
    if (P == 0) return out;

    MatX normals64 = vertex_normals(f.topo.faces, positions);
    Image x_px = interpolate(frag, positions, f.topo.faces);
    Image n_px = interpolate(frag, normals64, f.topo.faces);

    const int q = int(f.latents.cols());
    const int in0 = 6 * f.nspec.freq_x + 3 + q + 6 * f.nspec.freq_d;
    MatXf input(P, in0);
    parallel_blocks(P, 2048, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            int p = frag.covered[size_t(i)];
            const auto& tf = f.topo.faces[size_t(frag.tri[size_t(p)])];
            const double* bary = &frag.bary[size_t(p) * 3];
            int col = 0;
            // posenc(x / scale)
            for (int j = 0; j < f.nspec.freq_x; ++j) {
                float fr = float(std::pow(2.0, j) * M_PI);
                for (int c = 0; c < 3; ++c) {
                    float v = float(x_px.data[size_t(p) * 3 + size_t(c)] / f.x_scale);
                    input(i, col + c) = std::sin(fr * v);
                    input(i, col + 3 + c) = std::cos(fr * v);
                }
                col += 6;
            }
            for (int c = 0; c < 3; ++c) input(i, col++) = float(n_px.data[size_t(p) * 3 + size_t(c)]);
            for (int k = 0; k < q; ++k)
                input(i, col++) = float(bary[0]) * f.latents(tf[0], k) +
                                  float(bary[1]) * f.latents(tf[1], k) +
                                  float(bary[2]) * f.latents(tf[2], k);
            double sx = (p % cam.width) + 0.5, sy = (p / cam.width) + 0.5;
            Vec3 dir = cam.ray_dir(sx, sy);
            for (int j = 0; j < f.nspec.freq_d; ++j) {
                float fr = float(std::pow(2.0, j) * M_PI);
                for (int c = 0; c < 3; ++c) {
                    input(i, col + c) = std::sin(fr * float(dir[c]));
                    input(i, col + 3 + c) = std::cos(fr * float(dir[c]));
                }
                col += 6;
            }
        }
    });

    MatXf h = input;
    for (int layer = 1; layer <= f.nspec.depth; ++layer) {
        if (layer == f.nspec.skip_layer && layer > 1) {
            MatXf cat(P, h.cols() + input.cols());
            cat << h, input;
            h = std::move(cat);
        }
        const MatXf& W = f.nW[size_t(layer - 1)];
        MatXf next(P, W.cols());
        parallel_blocks(P, 1024, [&](int64_t r0, int64_t r1) {
            next.middleRows(r0, r1 - r0).noalias() = h.middleRows(r0, r1 - r0) * W;
        });
        next.rowwise() += f.nb[size_t(layer - 1)];
        if (layer < f.nspec.depth)
            next = next.cwiseMax(0.0f);
        h = std::move(next);
    }
    for (int64_t i = 0; i < P; ++i) {
        int p = frag.covered[size_t(i)];
        for (int c = 0; c < 3; ++c) {
            float v = h(i, c);
            out.data[size_t(p) * 3 + size_t(c)] =
                v >= 0 ? 1.0 / (1.0 + std::exp(-double(v)))
                       : std::exp(double(v)) / (1.0 + std::exp(double(v)));
        }
    }
    return out;
}

}  // namespace palm
