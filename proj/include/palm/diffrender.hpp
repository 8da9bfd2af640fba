#pragma once

// Differentiable Lambertian render path: positions -> normals -> rasterized
// interpolation -> SH shading -> alpha-modulated image tensor.
//
// For loss evaluation the image can be assembled over a crop around the
// foreground only. With a margin of one full SSIM window, every window
// outside the crop is identically background in both images, so full-image
// photometric losses are recovered exactly from the crop.

#include "palm/diffops.hpp"

namespace palm {

// immutable per-topology handles shared across training steps
struct RenderTopology {
    std::shared_ptr<const std::vector<std::array<int, 3>>> faces;
    std::shared_ptr<const std::vector<std::array<int, 2>>> edges;

    static RenderTopology from_mesh(const TriMesh& m) {
        return {std::make_shared<const std::vector<std::array<int, 3>>>(m.faces),
                std::make_shared<const std::vector<std::array<int, 2>>>(m.edges)};
    }
};

struct CropBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

// bounding box of the rendered coverage and the target foreground, dilated by
// `margin` pixels and clamped; degenerate inputs fall back to the full frame
inline CropBox loss_crop_box(const FragmentBuffer& frag, const Tensor& target_mask, int margin) {
    const int W = frag.width, H = frag.height;
    int x0 = W, y0 = H, x1 = 0, y1 = 0;
    auto grow = [&](int p) {
        int x = p % W, y = p / W;
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x + 1);
        y1 = std::max(y1, y + 1);
    };
    for (int p : frag.covered) grow(p);
    for (int64_t p = 0; p < target_mask.size(); ++p)
        if ((*target_mask.data)[size_t(p)] > 0.0) grow(int(p));
    if (x0 >= x1 || y0 >= y1) return {0, 0, W, H};
    CropBox box{std::max(0, x0 - margin), std::max(0, y0 - margin), std::min(W, x1 + margin),
                std::min(H, y1 + margin)};
    // photometric windows need at least one full window inside the crop
    while (box.width() < margin + 1 && (box.x0 > 0 || box.x1 < W)) {
        box.x0 = std::max(0, box.x0 - 1);
        box.x1 = std::min(W, box.x1 + 1);
    }
    while (box.height() < margin + 1 && (box.y0 > 0 || box.y1 < H)) {
        box.y0 = std::max(0, box.y0 - 1);
        box.y1 = std::min(H, box.y1 + 1);
    }
    return box;
}

// crop a constant {H,W,C} tensor
inline Tensor crop_constant(const Tensor& img, const CropBox& box) {
    const int W = img.shape[1], C = img.shape[2];
    Tensor out = Tensor::zeros({box.height(), box.width(), C});
    for (int y = 0; y < box.height(); ++y)
        for (int x = 0; x < box.width(); ++x)
            for (int c = 0; c < C; ++c)
                (*out.data)[(size_t(y) * box.width() + x) * C + size_t(c)] =
                    (*img.data)[(size_t(y + box.y0) * W + (x + box.x0)) * C + size_t(c)];
    return out;
}

struct DiffRender {
    std::shared_ptr<const FragmentBuffer> frag;
    std::shared_ptr<const std::vector<int>> covered;        // row-major pixel ids
    std::shared_ptr<const std::vector<int>> covered_local;  // ids within the crop
    Tensor rgb_px;     // [P x 3], alpha-premultiplied
    Tensor alpha_img;  // [H*W x 1]
    Tensor rgb_full;   // {H, W, 3}; crop-sized when a crop mask is used
    CropBox crop;      // equals the full frame when no crop was requested
};

// When `crop_mask` (an [H*W x 1] foreground mask) is given, the image tensor
// is assembled over the dilated foreground bounding box only.
inline DiffRender diff_render_lambert(const Camera& cam, const TriMesh& topo,
                                      const RenderTopology& rt, const Tensor& positions,
                                      const Tensor& albedo, const Tensor& light,
                                      const Tensor* crop_mask = nullptr) {
    if (light.size() != 9) throw NumericalError("diff_render_lambert: light must have 9 coeffs");
    DiffRender out;
    auto frag = std::make_shared<FragmentBuffer>(rasterize(cam, topo, positions.mat()));
    out.frag = frag;
    out.covered = std::make_shared<const std::vector<int>>(frag->covered);
    out.crop = crop_mask ? loss_crop_box(*frag, *crop_mask, 10)
                         : CropBox{0, 0, cam.width, cam.height};

    Tensor normals = op_vertex_normals(positions, rt.faces);
    Tensor n_px = normalize_rows(op_face_interp(normals, out.frag, rt.faces));
    Tensor a_px = op_face_interp(albedo, out.frag, rt.faces);
    Tensor radiance = relu(matmul(op_sh_basis(n_px), light));  // [P x 1]
    out.alpha_img = op_silhouette_alpha(positions, out.frag);
    Tensor alpha_px = gather_rows(out.alpha_img, out.covered);
    out.rgb_px = mul(mul(a_px, radiance), alpha_px);

    const CropBox& box = out.crop;
    auto local = std::make_shared<std::vector<int>>();
    local->reserve(frag->covered.size());
    for (int p : frag->covered) {
        int x = p % cam.width, y = p / cam.width;
        if (!box.contains(x, y))
            throw NumericalError("diff_render_lambert: covered pixel outside the crop box");
        local->push_back((y - box.y0) * box.width() + (x - box.x0));
    }
    out.covered_local = std::shared_ptr<const std::vector<int>>(local);
    out.rgb_full = reshape(scatter_rows(out.rgb_px, out.covered_local,
                                        {box.height() * box.width(), 3}),
                           {box.height(), box.width(), 3});
    return out;
}

}  // namespace palm
