#pragma once

// Tape ops that bridge meshes and images: LBS skinning, vertex normals,
// Laplacian application, edge vectors, barycentric interpolation over a
// FragmentBuffer, silhouette alpha, SH basis evaluation, and a separable
// Gaussian blur. Rasterized topology (triangle assignment, barycentrics) is
// constant during backward; geometry gradients flow through normals and the
// silhouette band only.

#include "palm/raster.hpp"
#include "palm/rig.hpp"
#include "palm/tensor.hpp"

namespace palm {

inline Tensor tensor_from_image(const Image& img) {
    Tensor t = Tensor::zeros({img.height, img.width, img.channels});
    std::copy(img.data.begin(), img.data.end(), t.data->begin());
    return t;
}

inline Image image_from_tensor(const Tensor& t) {
    if (t.shape.size() != 3) throw NumericalError("image_from_tensor: need {H,W,C}");
    Image img(t.shape[1], t.shape[0], t.shape[2]);
    std::copy(t.data->begin(), t.data->end(), img.data.begin());
    return img;
}

// v = sum_j W_vj * T_j * v_rest; differentiable w.r.t. rest positions and
// weights, transforms are constants.
inline Tensor op_skin_lbs(const Tensor& rest, const Tensor& weights,
                          std::shared_ptr<const std::vector<Mat4>> transforms) {
    const int64_t V = rest.rows();
    const int J = weights.cols();
    if (weights.rows() != V || rest.cols() != 3)
        throw NumericalError(format_msg("op_skin_lbs: shapes ", rest.shape_str(), " / ",
                                        weights.shape_str()));
    Tensor out = Tensor::zeros({int(V), 3});
    {
        auto R = rest.mat();
        auto W = weights.mat();
        auto O = out.mat();
        parallel_for(V, [&](int64_t v) {
            Vec3 p = R.row(v);
            Vec3 acc = Vec3::Zero();
            for (int j = 0; j < J; ++j) {
                double w = W(v, j);
                if (w == 0.0) continue;
                const Mat4& T = (*transforms)[size_t(j)];
                acc += w * (T.topLeftCorner<3, 3>() * p + T.topRightCorner<3, 1>());
            }
            O.row(v) = acc.transpose();
        });
    }
    if (Tape* tape = detail::result_tape({&rest, &weights})) {
        out.tape = tape;
        const int id = tape->add_node(out.size());
        out.node = id;
        auto rd = rest.data, wd = weights.data;
        const int rn = rest.node, wn = weights.node;
        tape->set_backward(id, [=](Tape& t) {
            Eigen::Map<const MatX> G(t.grad_of(id).data(), V, 3);
            Eigen::Map<const MatX> R(rd->data(), V, 3);
            Eigen::Map<const MatX> W(wd->data(), V, J);
            Eigen::Map<MatX> dR(rn >= 0 ? t.grad_of(rn).data() : nullptr, rn >= 0 ? V : 0, 3);
            Eigen::Map<MatX> dW(wn >= 0 ? t.grad_of(wn).data() : nullptr, wn >= 0 ? V : 0, J);
            parallel_for(V, [&](int64_t v) {
                Vec3 g = G.row(v);
                Vec3 p = R.row(v);
                Vec3 gr = Vec3::Zero();
                for (int j = 0; j < J; ++j) {
                    const Mat4& T = (*transforms)[size_t(j)];
                    if (wn >= 0)
                        dW(v, j) += g.dot(T.topLeftCorner<3, 3>() * p + T.topRightCorner<3, 1>());
                    if (rn >= 0 && W(v, j) != 0.0)
                        gr += W(v, j) * (T.topLeftCorner<3, 3>().transpose() * g);
                }
                if (rn >= 0) dR.row(v) += gr.transpose();
            });
        });
    }
    return out;
}

// Area-weighted unit vertex normals of a fixed-topology mesh.
inline Tensor op_vertex_normals(const Tensor& positions,
                                std::shared_ptr<const std::vector<std::array<int, 3>>> faces) {
    const int64_t V = positions.rows();
    Tensor out = Tensor::zeros({int(V), 3});
    auto acc_store = std::make_shared<std::vector<double>>(size_t(V) * 3, 0.0);
    {
        Eigen::Map<MatX> acc(acc_store->data(), V, 3);
        auto P = positions.mat();
        for (const auto& tri : *faces) {
            Vec3 p0 = P.row(tri[0]), p1 = P.row(tri[1]), p2 = P.row(tri[2]);
            Vec3 n = (p1 - p0).cross(p2 - p0);
            for (int k = 0; k < 3; ++k) acc.row(tri[size_t(k)]) += n.transpose();
        }
        auto O = out.mat();
        for (int64_t v = 0; v < V; ++v) {
            double len = acc.row(v).norm();
            if (len < 1e-300)
                O.row(v) << 0, 0, 1;
            else
                O.row(v) = acc.row(v) / len;
        }
    }
    if (Tape* tape = detail::result_tape({&positions})) {
        out.tape = tape;
        const int id = tape->add_node(out.size());
        out.node = id;
        const int pn = positions.node;
        auto pd = positions.data;
        tape->set_backward(id, [=](Tape& t) {
            Eigen::Map<const MatX> G(t.grad_of(id).data(), V, 3);
            Eigen::Map<const MatX> P(pd->data(), V, 3);
            Eigen::Map<const MatX> acc(acc_store->data(), V, 3);
            Eigen::Map<MatX> dP(t.grad_of(pn).data(), V, 3);
            // gradient w.r.t. the unnormalized accumulators
            MatX gacc(V, 3);
            for (int64_t v = 0; v < V; ++v) {
                double len = acc.row(v).norm();
                if (len < 1e-300) {
                    gacc.row(v).setZero();
                } else {
                    Eigen::RowVector3d y = acc.row(v) / len;
                    gacc.row(v) = (G.row(v) - y * G.row(v).dot(y)) / len;
                }
            }
            for (const auto& tri : *faces) {
                Vec3 p0 = P.row(tri[0]), p1 = P.row(tri[1]), p2 = P.row(tri[2]);
                Vec3 e1 = p1 - p0, e2 = p2 - p0;
                Vec3 h = Vec3(gacc.row(tri[0])) + Vec3(gacc.row(tri[1])) +
                         Vec3(gacc.row(tri[2]));
                Vec3 ge1 = e2.cross(h);
                Vec3 ge2 = h.cross(e1);
                dP.row(tri[0]) -= (ge1 + ge2).transpose();
                dP.row(tri[1]) += ge1.transpose();
                dP.row(tri[2]) += ge2.transpose();
            }
        });
    }
    return out;
}

// A = L * f
inline Tensor op_laplacian_apply(std::shared_ptr<const SparseLaplacian> L, const Tensor& f) {
    if (f.rows() != L->rows()) throw NumericalError("op_laplacian_apply: row mismatch");
    Tensor out = Tensor::from_matrix(L->apply(f.mat()));
    if (Tape* tape = detail::result_tape({&f})) {
        out.tape = tape;
        const int id = tape->add_node(out.size());
        out.node = id;
        const int fn = f.node;
        const int64_t R = f.rows();
        const int C = f.cols();
        tape->set_backward(id, [=](Tape& t) {
            Eigen::Map<const MatX> G(t.grad_of(id).data(), R, C);
            Eigen::Map<MatX> dF(t.grad_of(fn).data(), R, C);
            dF += L->apply_transpose(G);
        });
    }
    return out;
}

// e_k = p_a(k) - p_b(k) for the mesh's unique edges
inline Tensor op_edge_vectors(const Tensor& positions,
                              std::shared_ptr<const std::vector<std::array<int, 2>>> edges) {
    const int64_t E = int64_t(edges->size());
    Tensor out = Tensor::zeros({int(E), 3});
    for (int64_t e = 0; e < E; ++e)
        out.mat().row(e) = positions.mat().row((*edges)[size_t(e)][0]) -
                           positions.mat().row((*edges)[size_t(e)][1]);
    if (Tape* tape = detail::result_tape({&positions})) {
        out.tape = tape;
        const int id = tape->add_node(out.size());
        out.node = id;
        const int pn = positions.node;
        const int64_t V = positions.rows();
        tape->set_backward(id, [=](Tape& t) {
            Eigen::Map<const MatX> G(t.grad_of(id).data(), E, 3);
            Eigen::Map<MatX> dP(t.grad_of(pn).data(), V, 3);
            for (int64_t e = 0; e < E; ++e) {
                dP.row((*edges)[size_t(e)][0]) += G.row(e);
                dP.row((*edges)[size_t(e)][1]) -= G.row(e);
            }
        });
    }
    return out;
}

// Per-covered-pixel barycentric interpolation, rows in frag.covered order.
// Differentiable w.r.t. the vertex attributes only.
inline Tensor op_face_interp(const Tensor& attrs, std::shared_ptr<const FragmentBuffer> frag,
                             std::shared_ptr<const std::vector<std::array<int, 3>>> faces) {
    const int C = attrs.cols();
    const int64_t P = int64_t(frag->covered.size());
    Tensor out = Tensor::zeros({int(P), C});
    for (int64_t i = 0; i < P; ++i) {
        int p = frag->covered[size_t(i)];
        const auto& tf = (*faces)[size_t(frag->tri[size_t(p)])];
        const double* b = &frag->bary[size_t(p) * 3];
        out.mat().row(i) = b[0] * attrs.mat().row(tf[0]) + b[1] * attrs.mat().row(tf[1]) +
                           b[2] * attrs.mat().row(tf[2]);
    }
    if (Tape* tape = detail::result_tape({&attrs})) {
        out.tape = tape;
        const int id = tape->add_node(out.size());
        out.node = id;
        const int an = attrs.node;
        const int64_t V = attrs.rows();
        tape->set_backward(id, [=](Tape& t) {
            Eigen::Map<const MatX> G(t.grad_of(id).data(), P, C);
            Eigen::Map<MatX> dA(t.grad_of(an).data(), V, C);
            for (int64_t i = 0; i < P; ++i) {
                int p = frag->covered[size_t(i)];
                const auto& tf = (*faces)[size_t(frag->tri[size_t(p)])];
                const double* b = &frag->bary[size_t(p) * 3];
                for (int k = 0; k < 3; ++k) dA.row(tf[size_t(k)]) += b[size_t(k)] * G.row(i);
            }
        });
    }
    return out;
}

// Silhouette alpha as an {H*W, 1} image tensor. The forward value comes from
// the fragment buffer (rasterized from the same positions); the backward pass
// moves the projected endpoints of the nearest silhouette edge per band
// pixel, with the closest-point parameter treated as constant.
inline Tensor op_silhouette_alpha(const Tensor& positions,
                                  std::shared_ptr<const FragmentBuffer> frag) {
    const int64_t HW = int64_t(frag->width) * frag->height;
    Tensor out = Tensor::zeros({int(HW), 1});
    std::copy(frag->alpha.begin(), frag->alpha.end(), out.data->begin());
    if (Tape* tape = detail::result_tape({&positions})) {
        out.tape = tape;
        const int id = tape->add_node(out.size());
        out.node = id;
        const int pn = positions.node;
        const int64_t V = positions.rows();
        tape->set_backward(id, [=](Tape& t) {
            const auto& g = t.grad_of(id);
            Eigen::Map<MatX> dP(t.grad_of(pn).data(), V, 3);
            for (const auto& bp : frag->band) {
                double ga = g[size_t(bp.px)];
                if (ga == 0.0) continue;
                double a = frag->alpha[size_t(bp.px)];
                if (a <= 0.0 || a >= 1.0) continue;  // clamp region
                double axs = frag->screen(bp.va, 0), ays = frag->screen(bp.va, 1);
                double bxs = frag->screen(bp.vb, 0), bys = frag->screen(bp.vb, 1);
                double sx = (bp.px % frag->width) + 0.5, sy = (bp.px / frag->width) + 0.5;
                double qx = axs + bp.t * (bxs - axs), qy = ays + bp.t * (bys - ays);
                double rx = sx - qx, ry = sy - qy;
                double dist = std::hypot(rx, ry);
                if (dist < 1e-9) continue;
                // alpha = 0.5 + inside * dist; d dist/d q = -(r)/dist
                double gq = ga * double(bp.inside);
                double gqx = -gq * rx / dist, gqy = -gq * ry / dist;
                auto add = [&](int v, double w) {
                    const double* J = &frag->jac[size_t(v) * 6];
                    dP(v, 0) += w * (gqx * J[0] + gqy * J[3]);
                    dP(v, 1) += w * (gqx * J[1] + gqy * J[4]);
                    dP(v, 2) += w * (gqx * J[2] + gqy * J[5]);
                };
                add(bp.va, 1.0 - bp.t);
                add(bp.vb, bp.t);
            }
        });
    }
    return out;
}

// Third-order SH basis rows for unit normals (callers normalize upstream).
inline Tensor op_sh_basis(const Tensor& unit_normals) {
    const int64_t P = unit_normals.rows();
    if (unit_normals.cols() != 3) throw NumericalError("op_sh_basis: need [P x 3]");
    Tensor out = Tensor::zeros({int(P), 9});
    for (int64_t i = 0; i < P; ++i) {
        const double x = unit_normals(i, 0), y = unit_normals(i, 1), z = unit_normals(i, 2);
        double* o = out.ptr() + i * 9;
        o[0] = shc::k0;
        o[1] = shc::k1 * y;
        o[2] = shc::k1 * z;
        o[3] = shc::k1 * x;
        o[4] = shc::k2 * x * y;
        o[5] = shc::k2 * y * z;
        o[6] = shc::k20 * (3.0 * z * z - 1.0);
        o[7] = shc::k2 * x * z;
        o[8] = shc::k22 * (x * x - y * y);
    }
    if (Tape* tape = detail::result_tape({&unit_normals})) {
        out.tape = tape;
        const int id = tape->add_node(out.size());
        out.node = id;
        const int nn = unit_normals.node;
        auto nd = unit_normals.data;
        tape->set_backward(id, [=](Tape& t) {
            const auto& g = t.grad_of(id);
            Eigen::Map<MatX> dN(t.grad_of(nn).data(), P, 3);
            for (int64_t i = 0; i < P; ++i) {
                Vec3 n((*nd)[size_t(i * 3)], (*nd)[size_t(i * 3 + 1)], (*nd)[size_t(i * 3 + 2)]);
                auto grads = sh_basis_gradient(n);
                Vec3 acc = Vec3::Zero();
                for (int k = 0; k < 9; ++k) acc += g[size_t(i * 9 + k)] * grads[size_t(k)];
                dN.row(i) += acc.transpose();
            }
        });
    }
    return out;
}

// Separable valid-window Gaussian filter over an {H,W,C} image tensor.
inline Tensor op_blur_valid(const Tensor& img, std::shared_ptr<const std::vector<double>> kernel) {
    if (img.shape.size() != 3) throw NumericalError("op_blur_valid: need {H,W,C}");
    const int H = img.shape[0], W = img.shape[1], C = img.shape[2];
    const int K = int(kernel->size());
    const int Ho = H - K + 1, Wo = W - K + 1;
    if (Ho <= 0 || Wo <= 0) throw NumericalError("op_blur_valid: window larger than image");
    if (K > 32) throw NumericalError("op_blur_valid: kernel too wide");
    double kern[32];
    for (int k = 0; k < K; ++k) kern[k] = (*kernel)[size_t(k)];

    // horizontal valid pass (h, w) -> (h, w-K+1), channels flattened into x
    auto run_rows = [&](const double* src, int h, int w, double* dst) {
        const int wo = w - K + 1;
        parallel_blocks(h, 16, [&](int64_t y0, int64_t y1) {
            for (int64_t y = y0; y < y1; ++y) {
                const double* s = src + y * w * C;
                double* d = dst + y * wo * C;
                for (int x = 0; x < wo; ++x)
                    for (int c = 0; c < C; ++c) {
                        double acc = 0.0;
                        for (int k = 0; k < K; ++k) acc += kern[k] * s[(x + k) * C + c];
                        d[x * C + c] = acc;
                    }
            }
        });
    };
    // vertical valid pass (h, w) -> (h-K+1, w)
    auto run_cols = [&](const double* src, int h, int w, double* dst) {
        const int ho = h - K + 1;
        parallel_blocks(ho, 16, [&](int64_t y0, int64_t y1) {
            for (int64_t y = y0; y < y1; ++y) {
                double* d = dst + y * w * C;
                for (int64_t i = 0; i < int64_t(w) * C; ++i) d[i] = kern[0] * src[(y * w) * C + i];
                for (int k = 1; k < K; ++k) {
                    const double* s = src + ((y + k) * w) * C;
                    for (int64_t i = 0; i < int64_t(w) * C; ++i) d[i] += kern[k] * s[i];
                }
            }
        });
    };

    auto tmp = std::make_shared<std::vector<double>>(size_t(H) * Wo * C);
    Tensor out = Tensor::zeros({Ho, Wo, C});
    run_rows(img.ptr(), H, W, tmp->data());
    run_cols(tmp->data(), H, Wo, out.ptr());

    if (Tape* tape = detail::result_tape({&img})) {
        out.tape = tape;
        const int id = tape->add_node(out.size());
        out.node = id;
        const int in = img.node;
        auto kshared = kernel;
        tape->set_backward(id, [=](Tape& t) {
            double kb[32];
            for (int k = 0; k < K; ++k) kb[k] = (*kshared)[size_t(k)];
            const auto& g = t.grad_of(id);
            auto& din = t.grad_of(in);
            // transposed passes written in gather form so rows stay disjoint
            std::vector<double> gtmp(size_t(H) * Wo * C, 0.0);
            parallel_blocks(H, 16, [&](int64_t y0, int64_t y1) {
                for (int64_t y = y0; y < y1; ++y) {
                    double* d = gtmp.data() + (y * Wo) * C;
                    for (int k = 0; k < K; ++k) {
                        int64_t sy = y - k;
                        if (sy < 0 || sy >= Ho) continue;
                        const double* s = g.data() + (sy * Wo) * C;
                        for (int64_t i = 0; i < int64_t(Wo) * C; ++i) d[i] += kb[k] * s[i];
                    }
                }
            });
            parallel_blocks(H, 16, [&](int64_t y0, int64_t y1) {
                for (int64_t y = y0; y < y1; ++y) {
                    const double* s = gtmp.data() + (y * Wo) * C;
                    double* d = din.data() + (y * W) * C;
                    for (int x = 0; x < W; ++x)
                        for (int c = 0; c < C; ++c) {
                            double acc = 0.0;
                            for (int k = 0; k < K; ++k) {
                                int sx = x - k;
                                if (sx >= 0 && sx < Wo) acc += kb[k] * s[sx * C + c];
                            }
                            d[x * C + c] += acc;
                        }
                }
            });
        });
    }
    return out;
}

inline std::shared_ptr<const std::vector<double>> gaussian_kernel(int size, double sigma) {
    auto k = std::make_shared<std::vector<double>>(size_t(size));
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        double x = i - (size - 1) / 2.0;
        (*k)[size_t(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
        sum += (*k)[size_t(i)];
    }
    for (auto& v : *k) v /= sum;
    return k;
}

// reshape helper: reinterpret a [H*W x C] tensor as {H,W,C} (shares data/node)
inline Tensor reshape(const Tensor& t, std::vector<int> shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    if (n != t.size()) throw NumericalError("reshape: element count mismatch");
    Tensor out = t;
    out.shape = std::move(shape);
    return out;
}

}  // namespace palm
