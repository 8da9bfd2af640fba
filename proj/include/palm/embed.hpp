#pragma once

// Pose-conditioned feature embedding modules: per-vertex average feature plus
// a pose-decoded offset projected through a row-stochastic mapping matrix.
// One module each for LBS weights, displacements, and albedo.
//
// The first decoder layer is stored split into a pose part and a latent part:
// the pose contribution is a single row computed once per pose, the per-vertex
// work reduces to the latent columns.

#include "palm/diffops.hpp"
#include "palm/rig.hpp"

namespace palm {

struct DecoderSpec {
    int depth = 5;  // linear layers including the output layer
    int width = 128;
};

struct EmbeddingModule {
    enum class Kind { lbs, displacement, albedo };

    Kind kind = Kind::displacement;
    Tensor f_bar;         // V' x n average feature
    Tensor Q;             // V' x q per-vertex latent codes
    Tensor K;             // m x n mapping matrix, rows sum to 1
    Tensor W0_theta;      // theta_dim x width0 (first layer, pose columns)
    Tensor W0_q;          // q x width0 (first layer, latent columns)
    std::vector<Tensor> W;  // layers 1..depth-1
    std::vector<Tensor> b;  // row biases for all layers (size depth)
    Tensor offset_shift;  // V' x n, accumulated average offsets (not trained)

    int vertex_count() const { return int(f_bar.rows()); }
    int feature_dim() const { return f_bar.cols(); }
    int latent_dim() const { return Q.cols(); }
    int implicit_dim() const { return K.shape[0]; }

    // canonical parameter order, shared by checkpoints and the optimizer
    std::vector<std::pair<std::string, Tensor*>> parameters() {
        std::vector<std::pair<std::string, Tensor*>> ps = {
            {"f_bar", &f_bar}, {"Q", &Q}, {"K", &K},
            {"decoder.layer_0.wt", &W0_theta}, {"decoder.layer_0.wq", &W0_q}};
        for (size_t i = 0; i < W.size(); ++i)
            ps.emplace_back("decoder.layer_" + std::to_string(i + 1) + ".w", &W[i]);
        for (size_t i = 0; i < b.size(); ++i)
            ps.emplace_back("decoder.layer_" + std::to_string(i) + ".b", &b[i]);
        return ps;
    }
};

// Softplus MLP with a zero-initialized linear output layer: a fresh module
// reproduces f_bar exactly for every pose.
inline EmbeddingModule make_embedding(EmbeddingModule::Kind kind, int vertices, int theta_dim,
                                      int feature_dim, const DecoderSpec& spec, uint64_t seed,
                                      int latent_dim = 10, int implicit_dim = 32) {
    if (spec.depth < 2) throw ConfigError("make_embedding: decoder depth must be >= 2");
    EmbeddingModule m;
    m.kind = kind;
    m.f_bar = Tensor::zeros({vertices, feature_dim});
    m.offset_shift = Tensor::zeros({vertices, feature_dim});
    m.Q = Tensor::zeros({vertices, latent_dim});
    Rng rng(mix_seed(seed, uint64_t(kind) + 0x51));
    for (int64_t i = 0; i < m.Q.size(); ++i) (*m.Q.data)[size_t(i)] = 0.01 * rng.normal();
    m.K = Tensor::zeros({implicit_dim, feature_dim});
    for (int64_t i = 0; i < m.K.size(); ++i) (*m.K.data)[size_t(i)] = 1.0 / feature_dim;

    const int width0 = spec.depth == 2 ? implicit_dim : spec.width;
    double s0 = std::sqrt(2.0 / (theta_dim + latent_dim));
    m.W0_theta = Tensor::zeros({theta_dim, width0});
    m.W0_q = Tensor::zeros({latent_dim, width0});
    if (spec.depth > 2) {  // depth 2 means layer 0 IS the zeroed output layer
        for (int64_t i = 0; i < m.W0_theta.size(); ++i)
            (*m.W0_theta.data)[size_t(i)] = s0 * rng.normal();
        for (int64_t i = 0; i < m.W0_q.size(); ++i)
            (*m.W0_q.data)[size_t(i)] = s0 * rng.normal();
    }
    m.b.push_back(Tensor::zeros({1, width0}));

    int in_dim = width0;
    for (int layer = 1; layer < spec.depth; ++layer) {
        int out_dim = layer + 1 == spec.depth ? implicit_dim : spec.width;
        Tensor w = Tensor::zeros({in_dim, out_dim});
        if (layer + 1 < spec.depth) {
            double s = std::sqrt(2.0 / in_dim);
            for (int64_t i = 0; i < w.size(); ++i) (*w.data)[size_t(i)] = s * rng.normal();
        }
        m.W.push_back(std::move(w));
        m.b.push_back(Tensor::zeros({1, out_dim}));
        in_dim = out_dim;
    }
    return m;
}

inline Tensor pose_to_row(const Pose& pose) {
    Tensor t = Tensor::zeros({1, int(pose.theta.rows() * 3)});
    for (int j = 0; j < pose.theta.rows(); ++j)
        for (int c = 0; c < 3; ++c) (*t.data)[size_t(j * 3 + c)] = pose.theta(j, c);
    return t;
}

// Watched (or plain) views of a module's parameters for one training step.
struct EmbeddingParams {
    Tensor f_bar, Q, K, W0_theta, W0_q;
    std::vector<Tensor> W, b;

    static EmbeddingParams plain(const EmbeddingModule& m) {
        return {m.f_bar, m.Q, m.K, m.W0_theta, m.W0_q, m.W, m.b};
    }
    static EmbeddingParams watched(EmbeddingModule& m, Tape& tape) {
        EmbeddingParams p;
        p.f_bar = tape.watch(m.f_bar);
        p.Q = tape.watch(m.Q);
        p.K = tape.watch(m.K);
        p.W0_theta = tape.watch(m.W0_theta);
        p.W0_q = tape.watch(m.W0_q);
        for (auto& w : m.W) p.W.push_back(tape.watch(w));
        for (auto& bb : m.b) p.b.push_back(tape.watch(bb));
        return p;
    }

    // leaf node ids in the canonical EmbeddingModule::parameters() order
    std::vector<int> leaf_nodes() const {
        std::vector<int> ids = {f_bar.node, Q.node, K.node, W0_theta.node, W0_q.node};
        for (const auto& w : W) ids.push_back(w.node);
        for (const auto& bb : b) ids.push_back(bb.node);
        return ids;
    }
};

// f = f_bar + (Phi([theta; Q]) K - offset_shift)
inline Tensor embed_forward(const EmbeddingModule& m, const EmbeddingParams& p,
                            const Tensor& theta_row) {
    const int V = m.vertex_count();
    if (theta_row.rows() != 1)
        throw NumericalError("embed_forward: theta must be a single row");
    Tensor first = add(matmul(theta_row, p.W0_theta), p.b[0]);  // [1 x w0]
    Tensor h = add(matmul(p.Q, p.W0_q), broadcast_rows(first, V));
    for (size_t layer = 0; layer < p.W.size(); ++layer) {
        h = softplus(h);
        h = add(matmul(h, p.W[layer]), broadcast_rows(p.b[layer + 1], V));
    }
    Tensor offsets = sub(matmul(h, p.K), m.offset_shift);
    return add(p.f_bar, offsets);
}

inline Tensor embed_forward(const EmbeddingModule& m, const Pose& pose) {
    return embed_forward(m, EmbeddingParams::plain(m), pose_to_row(pose));
}

// clamp_min(0) then row-normalize; rows whose clamped sum vanishes fall back
// to the template weights for that vertex (no gradient through those rows).
inline Tensor normalize_lbs(const Tensor& raw, const MatX& template_weights) {
    if (raw.rows() != template_weights.rows() || raw.cols() != template_weights.cols())
        throw NumericalError("normalize_lbs: shape mismatch with template weights");
    const int64_t V = raw.rows();
    Tensor clamped = clamp_min(raw, 0.0);
    Tensor mask = Tensor::zeros({int(V), 1});
    Tensor fallback = Tensor::zeros(raw.shape);
    for (int64_t v = 0; v < V; ++v) {
        double s = 0.0;
        for (int j = 0; j < raw.cols(); ++j)
            s += std::max((*raw.data)[size_t(v * raw.cols() + j)], 0.0);
        if (s > 1e-8) {
            (*mask.data)[size_t(v)] = 1.0;
        } else {
            fallback.mat().row(v) = template_weights.row(v);
        }
    }
    Tensor denom = add_const(rowsum(clamped), 1e-8);
    Tensor normalized = mul(div(clamped, denom), mask);
    return add(normalized, fallback);
}

struct AvatarModules {
    EmbeddingModule lbs, disp, albedo;
};

struct PredictedFeatures {
    Tensor weights;  // V' x J, row-stochastic
    Tensor disp;     // V' x 3
    Tensor albedo;   // V' x 3, in [0,1]
};

inline PredictedFeatures predict_all(const AvatarModules& mods, const EmbeddingParams& p_lbs,
                                     const EmbeddingParams& p_disp,
                                     const EmbeddingParams& p_albedo, const Tensor& theta_row,
                                     const MatX& template_weights) {
    PredictedFeatures out;
    out.weights = normalize_lbs(embed_forward(mods.lbs, p_lbs, theta_row), template_weights);
    out.disp = embed_forward(mods.disp, p_disp, theta_row);
    out.albedo = clamp01_st(embed_forward(mods.albedo, p_albedo, theta_row));
    return out;
}

inline PredictedFeatures predict_all(const AvatarModules& mods, const Pose& pose,
                                     const MatX& template_weights) {
    return predict_all(mods, EmbeddingParams::plain(mods.lbs), EmbeddingParams::plain(mods.disp),
                       EmbeddingParams::plain(mods.albedo), pose_to_row(pose), template_weights);
}

// f_bar <- fitted; the decoder output layer is zeroed so the module
// reproduces `fitted` for every pose.
inline void init_from_fit(EmbeddingModule& m, const MatX& fitted) {
    if (fitted.rows() != m.f_bar.rows() || fitted.cols() != m.f_bar.cols())
        throw NumericalError(format_msg("init_from_fit: fitted is ", fitted.rows(), "x",
                                        fitted.cols(), ", module wants ", m.f_bar.rows(), "x",
                                        m.f_bar.cols()));
    m.f_bar.mat() = fitted;
    if (m.W.empty()) {
        std::fill(m.W0_theta.data->begin(), m.W0_theta.data->end(), 0.0);
        std::fill(m.W0_q.data->begin(), m.W0_q.data->end(), 0.0);
    } else {
        std::fill(m.W.back().data->begin(), m.W.back().data->end(), 0.0);
    }
    std::fill(m.b.back().data->begin(), m.b.back().data->end(), 0.0);
    std::fill(m.offset_shift.data->begin(), m.offset_shift.data->end(), 0.0);
}

// f_bar absorbs the mean pose offset; the shift keeps predictions unchanged
// while re-centering subsequent offsets toward zero.
inline void update_average(EmbeddingModule& m, const MatX& offsets_mean) {
    if (offsets_mean.rows() != m.f_bar.rows() || offsets_mean.cols() != m.f_bar.cols())
        throw NumericalError("update_average: shape mismatch");
    m.f_bar.mat() += offsets_mean;
    m.offset_shift.mat() += offsets_mean;
}

// mean over poses of the current decoded offsets (before f_bar)
inline MatX mean_offsets(const EmbeddingModule& m, const std::vector<Pose>& poses) {
    MatX acc = MatX::Zero(m.f_bar.rows(), m.f_bar.cols());
    for (const auto& pose : poses) {
        Tensor f = embed_forward(m, pose);
        acc += f.mat() - m.f_bar.mat();
    }
    return acc / double(poses.size());
}

// Euclidean projection of each row of K back onto the sum=1 hyperplane.
inline void project_k_rows(EmbeddingModule& m) {
    const int n = m.K.cols();
    for (int64_t i = 0; i < m.K.rows(); ++i) {
        double s = m.K.mat().row(i).sum();
        m.K.mat().row(i).array() += (1.0 - s) / n;
    }
}

inline double max_k_row_sum_error(const EmbeddingModule& m) {
    double worst = 0.0;
    for (int64_t i = 0; i < m.K.rows(); ++i)
        worst = std::max(worst, std::abs(m.K.mat().row(i).sum() - 1.0));
    return worst;
}

}  // namespace palm
