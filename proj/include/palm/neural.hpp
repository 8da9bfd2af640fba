#pragma once

// Per-pixel MLP renderer over rasterized mesh attributes: positional-encoded
// surface point and view ray, interpolated normal, and interpolated vertex
// latents (embedding latents detached, rendering latents trained).

#include "palm/diffrender.hpp"
#include "palm/embed.hpp"

namespace palm {

struct NeuralSpec {
    int depth = 8;       // fully-connected layers including the output layer
    int width = 256;
    int skip_layer = 5;  // the input is concatenated into this layer's input (1-based)
    int freq_x = 10;     // positional encoding frequencies for the surface point
    int freq_d = 4;      // and for the view direction
    int q_render = 20;
};

struct NeuralRenderer {
    NeuralSpec spec;
    std::vector<Tensor> W, b;
    Tensor Q_render;   // V' x q_render
    double x_scale = 1.0;  // surface points divide by this before encoding

    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> ps = {&Q_render};
        for (auto& w : W) ps.push_back(&w);
        for (auto& bb : b) ps.push_back(&bb);
        return ps;
    }
};

// [sin(2^j pi v), cos(2^j pi v)] for j = 0..freqs-1, blocks concatenated; the
// raw value is not included.
inline MatX posenc(const MatX& values, int num_freqs) {
    const int k = int(values.cols());
    MatX out(values.rows(), 2 * num_freqs * k);
    for (int j = 0; j < num_freqs; ++j) {
        double f = std::pow(2.0, j) * M_PI;
        for (int64_t r = 0; r < values.rows(); ++r)
            for (int c = 0; c < k; ++c) {
                out(r, 2 * j * k + c) = std::sin(f * values(r, c));
                out(r, (2 * j + 1) * k + c) = std::cos(f * values(r, c));
            }
    }
    return out;
}

inline NeuralRenderer make_neural_renderer(int vertices, int h_dim, double x_scale,
                                           const NeuralSpec& spec, uint64_t seed) {
    if (spec.depth < 2 || spec.skip_layer < 2 || spec.skip_layer > spec.depth)
        throw ConfigError("make_neural_renderer: bad depth/skip configuration");
    NeuralRenderer nr;
    nr.spec = spec;
    nr.x_scale = x_scale;
    Rng rng(mix_seed(seed, 0xbeef));
    nr.Q_render = Tensor::zeros({vertices, spec.q_render});
    for (int64_t i = 0; i < nr.Q_render.size(); ++i)
        (*nr.Q_render.data)[size_t(i)] = 0.01 * rng.normal();

    const int in0 = 6 * spec.freq_x + 3 + h_dim + 6 * spec.freq_d;
    int in_dim = in0;
    for (int layer = 1; layer <= spec.depth; ++layer) {
        if (layer == spec.skip_layer && layer > 1) in_dim += in0;
        int out_dim = layer == spec.depth ? 3 : spec.width;
        Tensor w = Tensor::zeros({in_dim, out_dim});
        if (layer < spec.depth) {
            double s = std::sqrt(2.0 / in_dim);
            for (int64_t i = 0; i < w.size(); ++i) (*w.data)[size_t(i)] = s * rng.normal();
        }
        nr.W.push_back(std::move(w));
        nr.b.push_back(Tensor::zeros({1, out_dim}));
        in_dim = out_dim;
    }
    return nr;
}

struct NeuralParams {
    Tensor Q_render;
    std::vector<Tensor> W, b;

    static NeuralParams plain(const NeuralRenderer& nr) { return {nr.Q_render, nr.W, nr.b}; }
    static NeuralParams watched(NeuralRenderer& nr, Tape& tape) {
        NeuralParams p;
        p.Q_render = tape.watch(nr.Q_render);
        for (auto& w : nr.W) p.W.push_back(tape.watch(w));
        for (auto& bb : nr.b) p.b.push_back(tape.watch(bb));
        return p;
    }
};

// MLP forward over covered pixels; returns {H,W,3} with `background` on
// uncovered pixels ({h,w,3} over `crop` when given). Gradients reach the MLP
// parameters and Q_render only: positions, normals and the embedding latents
// enter as constants.
inline Tensor neural_render(const NeuralRenderer& nr, const NeuralParams& np, const Camera& cam,
                            std::shared_ptr<const FragmentBuffer> frag, const RenderTopology& rt,
                            const MatX& positions, const MatX& normals, const MatX& latents_const,
                            double background = 0.0, const CropBox* crop = nullptr) {
    const int64_t P = int64_t(frag->covered.size());
    const CropBox box = crop ? *crop : CropBox{0, 0, cam.width, cam.height};
    const int HW = box.height() * box.width();

    Tensor out_img;
    if (P == 0) {
        out_img = Tensor::zeros({box.height(), box.width(), 3});
        std::fill(out_img.data->begin(), out_img.data->end(), background);
        return out_img;
    }

    // constant per-pixel inputs
    Image x_px = interpolate(*frag, positions, *rt.faces);
    Image n_px = interpolate(*frag, normals, *rt.faces);
    MatX x_mat(P, 3), n_mat(P, 3), d_mat(P, 3);
    for (int64_t i = 0; i < P; ++i) {
        int p = frag->covered[size_t(i)];
        for (int c = 0; c < 3; ++c) {
            x_mat(i, c) = x_px.data[size_t(p) * 3 + c] / nr.x_scale;
            n_mat(i, c) = n_px.data[size_t(p) * 3 + c];
        }
        double sx = (p % cam.width) + 0.5, sy = (p / cam.width) + 0.5;
        d_mat.row(i) = cam.ray_dir(sx, sy).transpose();
    }
    Tensor const_in = Tensor::from_matrix(posenc(x_mat, nr.spec.freq_x));
    Tensor n_const = Tensor::from_matrix(n_mat);
    Tensor d_enc = Tensor::from_matrix(posenc(d_mat, nr.spec.freq_d));

    // latent features: [Q_D | Q_rho] constants followed by trained Q_render
    Tensor h_vertex = concat_cols({Tensor::from_matrix(latents_const), np.Q_render});
    Tensor h_px = op_face_interp(h_vertex, frag, rt.faces);

    Tensor input = concat_cols({const_in, n_const, h_px, d_enc});
    Tensor h = input;
    for (int layer = 1; layer <= nr.spec.depth; ++layer) {
        if (layer == nr.spec.skip_layer && layer > 1) h = concat_cols({h, input});
        h = add(matmul(h, np.W[size_t(layer - 1)]),
                broadcast_rows(np.b[size_t(layer - 1)], P));
        if (layer < nr.spec.depth) h = relu(h);
    }
    Tensor rgb_px = sigmoid(h);  // [P x 3] in (0,1)

    auto local = std::make_shared<std::vector<int>>();
    local->reserve(frag->covered.size());
    for (int p : frag->covered) {
        int x = p % cam.width, y = p / cam.width;
        if (!box.contains(x, y)) throw NumericalError("neural_render: covered pixel outside crop");
        local->push_back((y - box.y0) * box.width() + (x - box.x0));
    }
    Tensor full = scatter_rows(rgb_px, std::shared_ptr<const std::vector<int>>(local), {HW, 3});
    if (background != 0.0) {
        Tensor bg = Tensor::zeros({HW, 3});
        for (int y = box.y0; y < box.y1; ++y)
            for (int x = box.x0; x < box.x1; ++x) {
                int p = y * cam.width + x;
                int lp = (y - box.y0) * box.width() + (x - box.x0);
                if (frag->tri[size_t(p)] < 0)
                    for (int c = 0; c < 3; ++c) (*bg.data)[size_t(lp) * 3 + size_t(c)] = background;
            }
        full = add(full, bg);
    }
    return reshape(full, {box.height(), box.width(), 3});
}

}  // namespace palm
