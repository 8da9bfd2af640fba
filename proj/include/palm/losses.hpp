#pragma once

// Training losses: L1+SSIM photometric loss, part-aware Laplacian smoothing
// with quantile-tiered weights, and the geometric regularizers (mask, edge
// length, displacement magnitude).

#include "palm/diffrender.hpp"

namespace palm {

struct PLapSpec {
    double quantile = 0.5;  // threshold p1 = this quantile of the row roughness
    double gamma1 = 0.1;    // below p1
    double gamma2 = 20.0;   // at or above p1
};

struct LossWeights {
    double lambda = 0.8;  // L1 vs SSIM in the inverse-rendering loss
    double omega = 0.8;   // L1 vs SSIM in the neural-rendering loss
    double alpha1 = 10.0;    // mask
    double alpha2 = 1e5;     // edge length
    double alpha3 = 1e4;     // displacement magnitude
    PLapSpec plap_albedo{0.25, 0.1, 1.0};
    PLapSpec plap_disp{0.5, 0.1, 20.0};
};

// Mean SSIM between two {H,W,C} images in [0,1]; 11x11 Gaussian window
// (sigma 1.5), valid windows only, averaged over channels.
inline Tensor ssim(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape || a.shape.size() != 3)
        throw NumericalError(format_msg("ssim: need equal {H,W,C} shapes, got ", a.shape_str(),
                                        " vs ", b.shape_str()));
    static const auto kernel = gaussian_kernel(11, 1.5);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    Tensor mu_a = op_blur_valid(a, kernel);
    Tensor mu_b = op_blur_valid(b, kernel);
    Tensor mu_aa = mul(mu_a, mu_a), mu_bb = mul(mu_b, mu_b), mu_ab = mul(mu_a, mu_b);
    Tensor sig_a = sub(op_blur_valid(mul(a, a), kernel), mu_aa);
    Tensor sig_b = sub(op_blur_valid(mul(b, b), kernel), mu_bb);
    Tensor sig_ab = sub(op_blur_valid(mul(a, b), kernel), mu_ab);
    Tensor num = mul(add_const(scale(mu_ab, 2.0), c1), add_const(scale(sig_ab, 2.0), c2));
    Tensor den = mul(add_const(add(mu_aa, mu_bb), c1), add_const(add(sig_a, sig_b), c2));
    return mean(div(num, den));
}

// lambda * L1 + (1 - lambda) * (1 - SSIM). The L1 mean runs over `covered`
// pixel rows when given, otherwise over the full image.
inline Tensor loss_rgb(const Tensor& pred, const Tensor& target, double lambda,
                       std::shared_ptr<const std::vector<int>> covered = nullptr) {
    Tensor l1;
    if (covered && !covered->empty()) {
        l1 = mean(abs(sub(gather_rows(pred, covered), gather_rows(target, covered))));
    } else {
        l1 = mean(abs(sub(pred, target)));
    }
    Tensor dssim = add_const(scale(ssim(pred, target), -1.0), 1.0);
    return add(scale(l1, lambda), scale(dssim, 1.0 - lambda));
}

// The same loss evaluated on a foreground crop whose margin guarantees that
// every window outside it is background in both images: those windows score
// exactly 1, so the full-image SSIM mean is reconstructed analytically.
inline Tensor loss_rgb_windows(const Tensor& pred_crop, const Tensor& target_crop, double lambda,
                               std::shared_ptr<const std::vector<int>> covered_local,
                               int64_t total_windows) {
    Tensor l1 = (covered_local && !covered_local->empty())
                    ? mean(abs(sub(gather_rows(pred_crop, covered_local),
                                   gather_rows(target_crop, covered_local))))
                    : Tensor::scalar(0.0);
    const int64_t crop_windows =
        int64_t(pred_crop.shape[0] - 10) * int64_t(pred_crop.shape[1] - 10);
    if (crop_windows <= 0 || crop_windows > total_windows)
        throw NumericalError("loss_rgb_windows: bad crop window count");
    Tensor ssim_crop = ssim(pred_crop, target_crop);
    Tensor ssim_full = scale(add_const(scale(ssim_crop, double(crop_windows)),
                                       double(total_windows - crop_windows)),
                             1.0 / double(total_windows));
    Tensor dssim = add_const(scale(ssim_full, -1.0), 1.0);
    return add(scale(l1, lambda), scale(dssim, 1.0 - lambda));
}

// nearest-rank quantile of a copied value list (detached from gradients)
inline double quantile_of(std::vector<double> values, double q) {
    if (values.empty()) throw NumericalError("quantile_of: empty");
    std::sort(values.begin(), values.end());
    auto idx = size_t(std::clamp(std::floor(q * double(values.size())), 0.0,
                                 double(values.size() - 1)));
    return values[idx];
}

// sum_i gamma(r_i) * r_i with r_i = |L f|_1 per row; gamma is gamma1 below
// the quantile threshold and gamma2 at or above it. The threshold is
// recomputed from values and carries no gradient.
inline Tensor loss_plap(const Tensor& field, std::shared_ptr<const SparseLaplacian> L,
                        const PLapSpec& spec) {
    Tensor r = rowsum(abs(op_laplacian_apply(L, field)));  // [V x 1]
    std::vector<double> vals(r.data->begin(), r.data->end());
    double p1 = quantile_of(vals, spec.quantile);
    Tensor gamma = Tensor::zeros({int(r.rows()), 1});
    for (int64_t i = 0; i < r.rows(); ++i)
        (*gamma.data)[size_t(i)] = vals[size_t(i)] < p1 ? spec.gamma1 : spec.gamma2;
    return sum(mul(r, gamma));
}

// alpha1 * mean|A - M| + alpha2 * sum((e_hat - e_rest)^2) + alpha3 * sum(D^2)
// + part-aware Laplacian smoothing of albedo and displacement.
struct RegInputs {
    const Tensor& albedo;            // V' x 3
    const Tensor& disp;              // V' x 3
    const Tensor& posed_positions;   // V' x 3 (on tape)
    const Tensor& alpha_img;         // H*W x 1 (on tape)
    const Tensor& target_mask;       // H*W x 1 constant
    Eigen::VectorXd rest_edge_lengths;
};

// individual weighted terms, kept separate for logging and NaN diagnosis
struct RegTerms {
    Tensor plap_albedo, plap_disp, mask, edge, disp;

    Tensor total() const {
        return add(add(plap_albedo, plap_disp), add(mask, add(edge, disp)));
    }
};

inline RegTerms loss_reg_terms(const RegInputs& in, std::shared_ptr<const SparseLaplacian> L,
                               const RenderTopology& rt, const LossWeights& w) {
    RegTerms t;
    t.plap_albedo = loss_plap(in.albedo, L, w.plap_albedo);
    t.plap_disp = loss_plap(in.disp, L, w.plap_disp);
    t.mask = scale(mean(abs(sub(in.alpha_img, in.target_mask))), w.alpha1);
    Tensor e_hat = l2norm(op_edge_vectors(in.posed_positions, rt.edges));
    Tensor e_rest = Tensor::zeros({int(in.rest_edge_lengths.size()), 1});
    for (int64_t i = 0; i < e_rest.size(); ++i)
        (*e_rest.data)[size_t(i)] = in.rest_edge_lengths[i];
    t.edge = scale(sum(square(sub(e_hat, e_rest))), w.alpha2);
    t.disp = scale(sum(square(in.disp)), w.alpha3);
    return t;
}

inline Tensor loss_reg(const RegInputs& in, std::shared_ptr<const SparseLaplacian> L,
                       const RenderTopology& rt, const LossWeights& w) {
    return loss_reg_terms(in, L, rt, w).total();
}

}  // namespace palm
