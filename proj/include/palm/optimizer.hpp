#pragma once

// Bias-corrected Adam over a fixed, ordered parameter list.

#include "palm/tensor.hpp"

namespace palm {

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig cfg;
    int64_t t = 0;
    std::vector<std::vector<double>> m, v;  // parallel to the parameter list

    void init(const std::vector<Tensor*>& params) {
        m.clear();
        v.clear();
        t = 0;
        for (const Tensor* p : params) {
            m.emplace_back(size_t(p->size()), 0.0);
            v.emplace_back(size_t(p->size()), 0.0);
        }
    }
    bool initialized_for(const std::vector<Tensor*>& params) const {
        if (m.size() != params.size()) return false;
        for (size_t i = 0; i < m.size(); ++i)
            if (int64_t(m[i].size()) != params[i]->size()) return false;
        return true;
    }
};

// One update step; `grads[i]` may be null (parameter untouched this step,
// treated as zero gradient so the moments still decay).
inline void adam_step(AdamState& state, const std::vector<Tensor*>& params,
                      const std::vector<const std::vector<double>*>& grads) {
    if (!state.initialized_for(params)) state.init(params);
    if (grads.size() != params.size())
        throw NumericalError("adam_step: grads/params count mismatch");
    state.t += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const double corr1 = 1.0 - std::pow(b1, double(state.t));
    const double corr2 = 1.0 - std::pow(b2, double(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& m = state.m[i];
        auto& v = state.v[i];
        auto& x = *params[i]->data;
        const std::vector<double>* g = grads[i];
        for (size_t k = 0; k < x.size(); ++k) {
            double gk = g ? (*g)[k] : 0.0;
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            double mhat = m[k] / corr1;
            double vhat = v[k] / corr2;
            x[k] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
        }
    }
}

}  // namespace palm
