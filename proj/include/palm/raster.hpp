#pragma once

// Tile-based z-buffer rasterizer with screen-space barycentrics, top-left
// fill rule and an antialiased silhouette alpha derived from the signed
// pixel-space distance to the nearest visible silhouette edge (1-pixel band).
// Back-face culling is off.

#include "palm/camera.hpp"
#include "palm/geometry.hpp"
#include "palm/sh.hpp"

#include <limits>

namespace palm {

struct Image {
    int width = 0, height = 0, channels = 0;
    std::vector<double> data;  // row-major, pixel-interleaved

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(size_t(w) * h * c, fill) {}

    double& at(int x, int y, int c) { return data[(size_t(y) * width + x) * channels + c]; }
    double at(int x, int y, int c) const { return data[(size_t(y) * width + x) * channels + c]; }
    int64_t pixel_count() const { return int64_t(width) * height; }
};

struct FragmentBuffer {
    int width = 0, height = 0;
    std::vector<int> tri;       // per pixel, -1 = uncovered
    std::vector<double> bary;   // 3 per pixel
    std::vector<double> depth;  // camera-space z of the winning fragment
    std::vector<double> alpha;  // silhouette alpha in [0,1]
    std::vector<int> covered;   // row-major indices of covered pixels

    // boundary-band pixels: alpha depends on the projected endpoints of the
    // nearest silhouette edge
    struct BandPixel {
        int px;       // pixel index
        int va, vb;   // mesh vertex ids of the silhouette edge
        double t;     // closest-point parameter on the segment
        int8_t inside;
    };
    std::vector<BandPixel> band;

    MatX screen;                 // V x 2 projected positions
    std::vector<double> jac;     // V x 6, row-major d(screen)/d(world)

    bool pixel_covered(int px) const { return tri[size_t(px)] >= 0; }
};

namespace detail {

inline bool edge_top_left(double dx, double dy) {
    // y grows downward; for positive-area winding, the top edge runs left to
    // right and left edges run upward
    return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

struct ScreenTri {
    double ax, ay, bx, by, cx, cy;  // after orientation normalization
    int i0, i1, i2;                 // vertex ids matching (a,b,c)
    double area2;
};

}  // namespace detail

inline FragmentBuffer rasterize(const Camera& cam, const TriMesh& topo, const MatX& positions) {
    if (positions.rows() != topo.vertex_count())
        throw DataError("rasterize: positions rows != vertex count");
    const int W = cam.width, H = cam.height;
    FragmentBuffer frag;
    frag.width = W;
    frag.height = H;
    frag.tri.assign(size_t(W) * H, -1);
    frag.bary.assign(size_t(W) * H * 3, 0.0);
    frag.depth.assign(size_t(W) * H, std::numeric_limits<double>::infinity());
    frag.alpha.assign(size_t(W) * H, 0.0);

    Eigen::VectorXd depth;
    std::vector<uint8_t> behind;
    project_all(cam, positions, frag.screen, depth, &behind);
    frag.jac.resize(size_t(positions.rows()) * 6);
    for (int64_t v = 0; v < positions.rows(); ++v) {
        auto J = cam.screen_jacobian(positions.row(v));
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c) frag.jac[size_t(v * 6 + r * 3 + c)] = J(r, c);
    }

    // set up screen triangles; cull faces with any vertex behind the camera
    const int F = topo.face_count();
    std::vector<detail::ScreenTri> tris(static_cast<size_t>(F));
    std::vector<double> face_area2(size_t(F), 0.0);  // signed, pre-normalization
    for (int f = 0; f < F; ++f) {
        const auto& tf = topo.faces[size_t(f)];
        detail::ScreenTri& st = tris[size_t(f)];
        st.area2 = 0.0;
        if (behind[size_t(tf[0])] || behind[size_t(tf[1])] || behind[size_t(tf[2])]) continue;
        st.i0 = tf[0];
        st.i1 = tf[1];
        st.i2 = tf[2];
        st.ax = frag.screen(tf[0], 0);
        st.ay = frag.screen(tf[0], 1);
        st.bx = frag.screen(tf[1], 0);
        st.by = frag.screen(tf[1], 1);
        st.cx = frag.screen(tf[2], 0);
        st.cy = frag.screen(tf[2], 1);
        double a2 = (st.bx - st.ax) * (st.cy - st.ay) - (st.by - st.ay) * (st.cx - st.ax);
        face_area2[size_t(f)] = a2;
        if (a2 == 0.0) continue;
        if (a2 < 0.0) {  // normalize winding, keep vertex ids aligned
            std::swap(st.bx, st.cx);
            std::swap(st.by, st.cy);
            std::swap(st.i1, st.i2);
            a2 = -a2;
        }
        st.area2 = a2;
    }

    // bin faces into 16x16 tiles, then rasterize tiles in parallel; within a
    // tile faces are visited in index order, so output is schedule-invariant
    constexpr int TS = 16;
    const int tx = (W + TS - 1) / TS, ty = (H + TS - 1) / TS;
    std::vector<std::vector<int>> tile_faces(size_t(tx) * ty);
    for (int f = 0; f < F; ++f) {
        const auto& st = tris[size_t(f)];
        if (st.area2 == 0.0) continue;
        double xmin = std::min({st.ax, st.bx, st.cx}), xmax = std::max({st.ax, st.bx, st.cx});
        double ymin = std::min({st.ay, st.by, st.cy}), ymax = std::max({st.ay, st.by, st.cy});
        int tx0 = std::clamp(int(std::floor(xmin / TS)), 0, tx - 1);
        int tx1 = std::clamp(int(std::floor(xmax / TS)), 0, tx - 1);
        int ty0 = std::clamp(int(std::floor(ymin / TS)), 0, ty - 1);
        int ty1 = std::clamp(int(std::floor(ymax / TS)), 0, ty - 1);
        if (xmax < 0 || ymax < 0 || xmin >= W || ymin >= H) continue;
        for (int j = ty0; j <= ty1; ++j)
            for (int i = tx0; i <= tx1; ++i) tile_faces[size_t(j) * tx + i].push_back(f);
    }

    parallel_for(int64_t(tx) * ty, [&](int64_t tile) {
        const int ti = int(tile % tx), tj = int(tile / tx);
        const int x0 = ti * TS, x1 = std::min(W, x0 + TS);
        const int y0 = tj * TS, y1 = std::min(H, y0 + TS);
        for (int f : tile_faces[size_t(tile)]) {
            const auto& st = tris[size_t(f)];
            const auto& tf = topo.faces[size_t(f)];
            int px0 = std::max(x0, int(std::floor(std::min({st.ax, st.bx, st.cx}))));
            int px1 = std::min(x1 - 1, int(std::floor(std::max({st.ax, st.bx, st.cx}))));
            int py0 = std::max(y0, int(std::floor(std::min({st.ay, st.by, st.cy}))));
            int py1 = std::min(y1 - 1, int(std::floor(std::max({st.ay, st.by, st.cy}))));
            for (int py = py0; py <= py1; ++py) {
                for (int px = px0; px <= px1; ++px) {
                    double sx = px + 0.5, sy = py + 0.5;
                    double e0 = (st.cx - st.bx) * (sy - st.by) - (st.cy - st.by) * (sx - st.bx);
                    double e1 = (st.ax - st.cx) * (sy - st.cy) - (st.ay - st.cy) * (sx - st.cx);
                    double e2 = (st.bx - st.ax) * (sy - st.ay) - (st.by - st.ay) * (sx - st.ax);
                    bool in0 = e0 > 0 || (e0 == 0 && detail::edge_top_left(st.cx - st.bx, st.cy - st.by));
                    bool in1 = e1 > 0 || (e1 == 0 && detail::edge_top_left(st.ax - st.cx, st.ay - st.cy));
                    bool in2 = e2 > 0 || (e2 == 0 && detail::edge_top_left(st.bx - st.ax, st.by - st.ay));
                    if (!(in0 && in1 && in2)) continue;
                    double w0 = e0 / st.area2, w1 = e1 / st.area2, w2 = e2 / st.area2;
                    // map normalized-winding weights back to face vertex order
                    double b[3];
                    auto assign = [&](int vid, double w) {
                        if (vid == tf[0]) b[0] = w;
                        else if (vid == tf[1]) b[1] = w;
                        else b[2] = w;
                    };
                    assign(st.i0, w0);
                    assign(st.i1, w1);
                    assign(st.i2, w2);
                    double z = b[0] * depth[tf[0]] + b[1] * depth[tf[1]] + b[2] * depth[tf[2]];
                    size_t pidx = size_t(py) * W + px;
                    if (z < frag.depth[pidx] ||
                        (z == frag.depth[pidx] && f < frag.tri[pidx])) {
                        frag.depth[pidx] = z;
                        frag.tri[pidx] = f;
                        frag.bary[pidx * 3 + 0] = b[0];
                        frag.bary[pidx * 3 + 1] = b[1];
                        frag.bary[pidx * 3 + 2] = b[2];
                    }
                }
            }
        }
    });

    for (int p = 0; p < W * H; ++p)
        if (frag.tri[size_t(p)] >= 0) frag.covered.push_back(p);

    // ---- silhouette alpha ----
    // silhouette edges: boundary edges, or interior edges whose two faces
    // project with opposite orientation; occluded edges are skipped
    std::vector<std::array<int, 2>> sil;
    for (int e = 0; e < topo.edge_count(); ++e) {
        const auto& fs = topo.edge_faces[size_t(e)];
        int va = topo.edges[size_t(e)][0], vb = topo.edges[size_t(e)][1];
        if (behind[size_t(va)] || behind[size_t(vb)]) continue;
        bool is_sil = false;
        if (fs.size() == 1) {
            is_sil = face_area2[size_t(fs[0])] != 0.0;
        } else {
            double a0 = face_area2[size_t(fs[0])], a1 = face_area2[size_t(fs[1])];
            is_sil = (a0 > 0) != (a1 > 0) || a0 == 0.0 || a1 == 0.0;
        }
        if (!is_sil) continue;
        // visibility: sample the z-buffer at the edge midpoint
        double mx = 0.5 * (frag.screen(va, 0) + frag.screen(vb, 0));
        double my = 0.5 * (frag.screen(va, 1) + frag.screen(vb, 1));
        double mz = 0.5 * (depth[va] + depth[vb]);
        int pxi = int(std::floor(mx)), pyi = int(std::floor(my));
        if (pxi >= 0 && pxi < W && pyi >= 0 && pyi < H) {
            double zbuf = frag.depth[size_t(pyi) * W + pxi];
            if (std::isfinite(zbuf) && mz > zbuf * (1.0 + 1e-3) + 1e-6) continue;
        }
        sil.push_back({va, vb});
    }

    // nearest silhouette segment per pixel, within a ~1.5 px search radius
    std::vector<double> best_d(size_t(W) * H, std::numeric_limits<double>::infinity());
    std::vector<int> best_e(size_t(W) * H, -1);
    std::vector<double> best_t(size_t(W) * H, 0.0);
    const double pad = 2.0;
    for (int si = 0; si < int(sil.size()); ++si) {
        double axs = frag.screen(sil[size_t(si)][0], 0), ays = frag.screen(sil[size_t(si)][0], 1);
        double bxs = frag.screen(sil[size_t(si)][1], 0), bys = frag.screen(sil[size_t(si)][1], 1);
        int gx0 = std::max(0, int(std::floor(std::min(axs, bxs) - pad)));
        int gx1 = std::min(W - 1, int(std::ceil(std::max(axs, bxs) + pad)));
        int gy0 = std::max(0, int(std::floor(std::min(ays, bys) - pad)));
        int gy1 = std::min(H - 1, int(std::ceil(std::max(ays, bys) + pad)));
        double ex = bxs - axs, ey = bys - ays;
        double len2 = ex * ex + ey * ey;
        for (int py = gy0; py <= gy1; ++py)
            for (int px = gx0; px <= gx1; ++px) {
                double sx = px + 0.5, sy = py + 0.5;
                double t = len2 > 0 ? std::clamp(((sx - axs) * ex + (sy - ays) * ey) / len2, 0.0, 1.0)
                                    : 0.0;
                double qx = axs + t * ex, qy = ays + t * ey;
                double d = std::hypot(sx - qx, sy - qy);
                size_t pidx = size_t(py) * W + px;
                if (d < best_d[pidx]) {
                    best_d[pidx] = d;
                    best_e[pidx] = si;
                    best_t[pidx] = t;
                }
            }
    }

    for (int p = 0; p < W * H; ++p) {
        bool cov = frag.tri[size_t(p)] >= 0;
        double a = cov ? 1.0 : 0.0;
        if (best_e[size_t(p)] >= 0 && best_d[size_t(p)] < 0.5) {
            double sd = cov ? best_d[size_t(p)] : -best_d[size_t(p)];
            a = std::clamp(0.5 + sd, 0.0, 1.0);
            frag.band.push_back({p, sil[size_t(best_e[size_t(p)])][0],
                                 sil[size_t(best_e[size_t(p)])][1], best_t[size_t(p)],
                                 int8_t(cov ? 1 : -1)});
        }
        frag.alpha[size_t(p)] = a;
    }
    return frag;
}

// Barycentric attribute interpolation over covered pixels; uncovered pixels 0.
inline Image interpolate(const FragmentBuffer& frag, const MatX& vertex_attrs,
                         const std::vector<std::array<int, 3>>& faces) {
    Image out(frag.width, frag.height, int(vertex_attrs.cols()));
    for (int p : frag.covered) {
        const auto& tf = faces[size_t(frag.tri[size_t(p)])];
        const double* b = &frag.bary[size_t(p) * 3];
        for (int c = 0; c < vertex_attrs.cols(); ++c)
            out.data[size_t(p) * out.channels + c] = b[0] * vertex_attrs(tf[0], c) +
                                                     b[1] * vertex_attrs(tf[1], c) +
                                                     b[2] * vertex_attrs(tf[2], c);
    }
    return out;
}

// color = albedo * max(sum G_k Y_k(n), 0) * alpha on covered pixels,
// background elsewhere
inline Image shade_lambert(const Image& albedo_px, const SHLight& light, const Image& normal_px,
                           const FragmentBuffer& frag, const Vec3& background = Vec3::Zero()) {
    Image out(frag.width, frag.height, 3);
    for (int64_t p = 0; p < out.pixel_count(); ++p)
        for (int c = 0; c < 3; ++c) out.data[size_t(p) * 3 + c] = background[c];
    for (int p : frag.covered) {
        Vec3 n(normal_px.data[size_t(p) * 3], normal_px.data[size_t(p) * 3 + 1],
               normal_px.data[size_t(p) * 3 + 2]);
        double nl = n.norm();
        if (nl < 1e-12) continue;
        double s = std::max(sh_eval(light, n / nl), 0.0) * frag.alpha[size_t(p)];
        for (int c = 0; c < 3; ++c)
            out.data[size_t(p) * 3 + c] = albedo_px.data[size_t(p) * 3 + c] * s;
    }
    return out;
}

inline Image render_mask(const FragmentBuffer& frag) {
    Image out(frag.width, frag.height, 1);
    out.data = frag.alpha;
    return out;
}

// Full plain (non-differentiable) Lambertian render of a posed mesh.
inline std::pair<Image, Image> render_lambert(const Camera& cam, const TriMesh& topo,
                                              const MatX& positions, const MatX& vertex_albedo,
                                              const SHLight& light,
                                              const Vec3& background = Vec3::Zero()) {
    FragmentBuffer frag = rasterize(cam, topo, positions);
    MatX normals = vertex_normals(topo.faces, positions);
    Image n_px = interpolate(frag, normals, topo.faces);
    Image a_px = interpolate(frag, vertex_albedo, topo.faces);
    return {shade_lambert(a_px, light, n_px, frag, background), render_mask(frag)};
}

}  // namespace palm
