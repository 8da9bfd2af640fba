#pragma once

// Dense float64 tensors with reverse-mode autodiff on an append-only tape.
//
// Conventions:
//  - row-major storage; the last shape dim is the column count, leading dims
//    flatten into rows (images are {H,W,C} = H*W rows of C).
//  - a Tensor is on a tape iff node >= 0; constants have node == -1.
//  - a tape lives for one training step: build graph, backward(), discard.
//  - elementwise binops broadcast a scalar or a [R x 1] column against [R x C].
//  - parallel kernels split into fixed blocks; results do not depend on the
//    thread count.

#include "palm/common.hpp"

#include <functional>
#include <memory>
#include <unordered_map>

namespace palm {

class Tape;

struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<double>> data;
    Tape* tape = nullptr;
    int node = -1;

    Tensor() = default;

    int64_t size() const { return data ? int64_t(data->size()) : 0; }
    int cols() const { return shape.empty() ? 1 : shape.back(); }
    int64_t rows() const { return cols() == 0 ? 0 : size() / cols(); }
    bool on_tape() const { return node >= 0; }
    double scalar_value() const { return (*data)[0]; }

    double* ptr() { return data->data(); }
    const double* ptr() const { return data->data(); }
    double& operator()(int64_t r, int64_t c) { return (*data)[size_t(r * cols() + c)]; }
    double operator()(int64_t r, int64_t c) const { return (*data)[size_t(r * cols() + c)]; }

    Eigen::Map<MatX> mat() { return {ptr(), rows(), cols()}; }
    Eigen::Map<const MatX> mat() const { return {ptr(), rows(), cols()}; }

    Tensor detached() const {
        Tensor t = *this;
        t.tape = nullptr;
        t.node = -1;
        return t;
    }

    static Tensor zeros(std::vector<int> shape) {
        Tensor t;
        t.shape = std::move(shape);
        int64_t n = 1;
        for (int d : t.shape) n *= d;
        t.data = std::make_shared<std::vector<double>>(size_t(n), 0.0);
        return t;
    }
    static Tensor scalar(double v) {
        Tensor t = zeros({1});
        (*t.data)[0] = v;
        return t;
    }
    static Tensor from_matrix(const MatX& m) {
        Tensor t = zeros({int(m.rows()), int(m.cols())});
        t.mat() = m;
        return t;
    }
    static Tensor from_vector(std::vector<double> v, std::vector<int> shape) {
        Tensor t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<double>>(std::move(v));
        int64_t n = 1;
        for (int d : t.shape) n *= d;
        if (n != int64_t(t.data->size())) throw ConfigError("from_vector: shape/data mismatch");
        return t;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
        return s + "]";
    }
};

class Tape {
public:
    // Registers a leaf; its gradient is collected by backward().
    Tensor watch(const Tensor& t) {
        Tensor out = t;
        out.tape = this;
        out.node = add_node(t.size(), true);
        return out;
    }

    int add_node(int64_t size, bool leaf = false) {
        nodes_.push_back({nullptr, size, leaf});
        grads_.emplace_back();
        return int(nodes_.size()) - 1;
    }
    void set_backward(int node, std::function<void(Tape&)> fn) {
        nodes_[size_t(node)].back = std::move(fn);
    }

    std::vector<double>& grad_of(int node) {
        auto& g = grads_[size_t(node)];
        if (g.empty()) g.assign(size_t(nodes_[size_t(node)].size), 0.0);
        return g;
    }
    bool has_grad(int node) const { return !grads_[size_t(node)].empty(); }

    // Reverse sweep from a scalar loss. Returns leaf-node id -> gradient and
    // clears the tape.
    std::unordered_map<int, std::vector<double>> backward(const Tensor& loss) {
        if (loss.size() != 1) throw NumericalError("backward: loss is not scalar");
        std::unordered_map<int, std::vector<double>> leaf_grads;
        if (loss.on_tape()) {
            grad_of(loss.node)[0] = 1.0;
            for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
                if (!has_grad(i)) continue;  // node does not influence the loss
                if (nodes_[size_t(i)].back) nodes_[size_t(i)].back(*this);
                if (nodes_[size_t(i)].leaf) leaf_grads.emplace(i, std::move(grads_[size_t(i)]));
            }
        }
        nodes_.clear();
        grads_.clear();
        return leaf_grads;
    }

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        std::function<void(Tape&)> back;
        int64_t size;
        bool leaf;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
};

namespace detail {

inline Tape* result_tape(std::initializer_list<const Tensor*> ins) {
    Tape* t = nullptr;
    for (const Tensor* p : ins) {
        if (!p->on_tape()) continue;
        if (t && t != p->tape) throw NumericalError("op: inputs recorded on different tapes");
        t = p->tape;
    }
    return t;
}

enum class Bcast { same, scalar, column };

inline Bcast bcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape == b.shape) return Bcast::same;
    if (b.size() == 1) return Bcast::scalar;
    if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::column;
    throw NumericalError(
        format_msg(op, ": shape mismatch ", a.shape_str(), " vs ", b.shape_str()));
}

// fwd(x, y) -> out; dx(x, y, g) / dy(x, y, g) -> grad contributions
template <typename F, typename DX, typename DY>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F fwd, DX dx, DY dy) {
    const Bcast k = bcast_kind(a, b, name);
    Tensor out = Tensor::zeros(a.shape);
    const int cols = a.cols();
    const int64_t n = a.size();
    {
        const double* ap = a.ptr();
        const double* bp = b.ptr();
        double* op = out.ptr();
        for (int64_t i = 0; i < n; ++i) {
            double y = k == Bcast::same ? bp[i] : k == Bcast::scalar ? bp[0] : bp[i / cols];
            op[i] = fwd(ap[i], y);
        }
    }
    if (Tape* tape = result_tape({&a, &b})) {
        out.tape = tape;
        const int id = tape->add_node(n);
        out.node = id;
        auto ad = a.data, bd = b.data;
        const int an = a.node, bn = b.node;
        tape->set_backward(id, [=](Tape& t) {
            const auto& g = t.grad_of(id);
            std::vector<double>* da = an >= 0 ? &t.grad_of(an) : nullptr;
            std::vector<double>* db = bn >= 0 ? &t.grad_of(bn) : nullptr;
            const double* ap = ad->data();
            const double* bp = bd->data();
            for (int64_t i = 0; i < n; ++i) {
                double x = ap[i];
                double y = k == Bcast::same ? bp[i] : k == Bcast::scalar ? bp[0] : bp[i / cols];
                if (da) (*da)[size_t(i)] += dx(x, y, g[size_t(i)]);
                if (db) {
                    size_t j = k == Bcast::same ? size_t(i) : k == Bcast::scalar ? 0 : size_t(i / cols);
                    (*db)[j] += dy(x, y, g[size_t(i)]);
                }
            }
        });
    }
    return out;
}

// fwd(x) -> out; dback(x, out, g) -> grad contribution
template <typename F, typename D>
Tensor unary_op(const Tensor& a, F fwd, D dback) {
    Tensor out = Tensor::zeros(a.shape);
    const int64_t n = a.size();
    {
        const double* ap = a.ptr();
        double* op = out.ptr();
        for (int64_t i = 0; i < n; ++i) op[i] = fwd(ap[i]);
    }
    if (Tape* tape = result_tape({&a})) {
        out.tape = tape;
        const int id = tape->add_node(n);
        out.node = id;
        auto ad = a.data, od = out.data;
        const int an = a.node;
        tape->set_backward(id, [=](Tape& t) {
            const auto& g = t.grad_of(id);
            auto& da = t.grad_of(an);
            const double* ap = ad->data();
            const double* op = od->data();
            for (int64_t i = 0; i < n; ++i) da[size_t(i)] += dback(ap[i], op[i], g[size_t(i)]);
        });
    }
    return out;
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

// ---- elementwise ----

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double g) { return g; }, [](double, double, double g) { return g; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double g) { return g; }, [](double, double, double g) { return -g; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double g) { return g * y; },
        [](double x, double, double g) { return g * x; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double g) { return g / y; },
        [](double x, double y, double g) { return -g * x / (y * y); });
}

inline Tensor scale(const Tensor& a, double c) {
    return detail::unary_op(
        a, [c](double x) { return c * x; }, [c](double, double, double g) { return c * g; });
}
inline Tensor add_const(const Tensor& a, double c) {
    return detail::unary_op(
        a, [c](double x) { return x + c; }, [](double, double, double g) { return g; });
}
inline Tensor abs(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::abs(x); },
        [](double x, double, double g) { return x > 0.0 ? g : (x < 0.0 ? -g : 0.0); });
}
inline Tensor square(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return x * x; }, [](double x, double, double g) { return 2.0 * x * g; });
}
inline Tensor sqrt(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::sqrt(x); },
        [](double x, double y, double g) { return x > 0.0 ? 0.5 * g / y : 0.0; });
}
inline Tensor exp(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::exp(x); }, [](double, double y, double g) { return g * y; });
}
inline Tensor log(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::log(x); }, [](double x, double, double g) { return g / x; });
}
inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}
// log1p(exp(-|x|)) + max(x, 0); derivative is the logistic function
inline Tensor softplus(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); },
        [](double x, double, double g) { return g * detail::stable_sigmoid(x); });
}
inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return detail::stable_sigmoid(x); },
        [](double, double y, double g) { return g * y * (1.0 - y); });
}
inline Tensor sin(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::sin(x); },
        [](double x, double, double g) { return g * std::cos(x); });
}
inline Tensor cos(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::cos(x); },
        [](double x, double, double g) { return -g * std::sin(x); });
}
inline Tensor clamp_min(const Tensor& a, double m) {
    return detail::unary_op(
        a, [m](double x) { return x > m ? x : m; },
        [m](double x, double, double g) { return x > m ? g : 0.0; });
}
// clamp to [0,1]; straight-through gradient strictly inside the interval
inline Tensor clamp01_st(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::clamp(x, 0.0, 1.0); },
        [](double x, double, double g) { return (x > 0.0 && x < 1.0) ? g : 0.0; });
}

// ---- reductions ----

inline Tensor sum(const Tensor& a) {
    Tensor out = Tensor::scalar(0.0);
    double s = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) s += (*a.data)[size_t(i)];
    (*out.data)[0] = s;
    if (Tape* tape = detail::result_tape({&a})) {
        out.tape = tape;
        const int id = tape->add_node(1);
        out.node = id;
        const int an = a.node;
        const int64_t n = a.size();
        tape->set_backward(id, [=](Tape& t) {
            double g = t.grad_of(id)[0];
            auto& da = t.grad_of(an);
            for (int64_t i = 0; i < n; ++i) da[size_t(i)] += g;
        });
    }
    return out;
}

inline Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw NumericalError("mean: empty tensor");
    return scale(sum(a), 1.0 / double(a.size()));
}

// [R x C] -> [R x 1]
inline Tensor rowsum(const Tensor& a) {
    const int64_t r = a.rows();
    const int c = a.cols();
    Tensor out = Tensor::zeros({int(r), 1});
    for (int64_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += a(i, j);
        (*out.data)[size_t(i)] = s;
    }
    if (Tape* tape = detail::result_tape({&a})) {
        out.tape = tape;
        const int id = tape->add_node(r);
        out.node = id;
        const int an = a.node;
        tape->set_backward(id, [=](Tape& t) {
            const auto& g = t.grad_of(id);
            auto& da = t.grad_of(an);
            for (int64_t i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) da[size_t(i * c + j)] += g[size_t(i)];
        });
    }
    return out;
}

// ---- matrix ops ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
        throw NumericalError(
            format_msg("matmul: incompatible shapes ", a.shape_str(), " vs ", b.shape_str()));
    const int64_t R = a.shape[0];
    const int K = a.shape[1], C = b.shape[1];
    Tensor out = Tensor::zeros({int(R), C});
    {
        auto A = a.mat();
        auto B = b.mat();
        auto O = out.mat();
        parallel_blocks(R, 256, [&](int64_t r0, int64_t r1) {
            O.middleRows(r0, r1 - r0).noalias() = A.middleRows(r0, r1 - r0) * B;
        });
    }
    if (Tape* tape = detail::result_tape({&a, &b})) {
        out.tape = tape;
        const int id = tape->add_node(out.size());
        out.node = id;
        auto ad = a.data, bd = b.data;
        const int an = a.node, bn = b.node;
        tape->set_backward(id, [=](Tape& t) {
            Eigen::Map<const MatX> G(t.grad_of(id).data(), R, C);
            Eigen::Map<const MatX> A(ad->data(), R, K);
            Eigen::Map<const MatX> B(bd->data(), K, C);
            if (an >= 0) {
                Eigen::Map<MatX> dA(t.grad_of(an).data(), R, K);
                parallel_blocks(R, 256, [&](int64_t r0, int64_t r1) {
                    dA.middleRows(r0, r1 - r0).noalias() +=
                        G.middleRows(r0, r1 - r0) * B.transpose();
                });
            }
            if (bn >= 0) {
                Eigen::Map<MatX> dB(t.grad_of(bn).data(), K, C);
                // row-block over K keeps the reduction order over R fixed
                parallel_blocks(K, 64, [&](int64_t k0, int64_t k1) {
                    dB.middleRows(k0, k1 - k0).noalias() +=
                        A.middleCols(k0, k1 - k0).transpose() * G;
                });
            }
        });
    }
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw NumericalError("concat_cols: no inputs");
    const int64_t R = parts[0].rows();
    int C = 0;
    for (const auto& p : parts) {
        if (p.rows() != R)
            throw NumericalError(format_msg("concat_cols: row mismatch ", p.shape_str()));
        C += p.cols();
    }
    Tensor out = Tensor::zeros({int(R), C});
    int off = 0;
    for (const auto& p : parts) {
        out.mat().middleCols(off, p.cols()) = p.mat();
        off += p.cols();
    }
    Tape* tape = nullptr;
    for (const auto& p : parts)
        if (p.on_tape()) tape = p.tape;
    if (tape) {
        out.tape = tape;
        const int id = tape->add_node(out.size());
        out.node = id;
        struct Piece {
            int node;
            int off, cols;
        };
        std::vector<Piece> pieces;
        int o = 0;
        for (const auto& p : parts) {
            pieces.push_back({p.node, o, p.cols()});
            o += p.cols();
        }
        tape->set_backward(id, [=](Tape& t) {
            Eigen::Map<const MatX> G(t.grad_of(id).data(), R, C);
            for (const auto& pc : pieces) {
                if (pc.node < 0) continue;
                Eigen::Map<MatX> dP(t.grad_of(pc.node).data(), R, pc.cols);
                dP += G.middleCols(pc.off, pc.cols);
            }
        });
    }
    return out;
}

inline Tensor slice_cols(const Tensor& a, int c0, int len) {
    if (c0 < 0 || c0 + len > a.cols()) throw NumericalError("slice_cols: range out of bounds");
    const int64_t R = a.rows();
    Tensor out = Tensor::zeros({int(R), len});
    out.mat() = a.mat().middleCols(c0, len);
    if (Tape* tape = detail::result_tape({&a})) {
        out.tape = tape;
        const int id = tape->add_node(out.size());
        out.node = id;
        const int an = a.node, C = a.cols();
        tape->set_backward(id, [=](Tape& t) {
            Eigen::Map<const MatX> G(t.grad_of(id).data(), R, len);
            Eigen::Map<MatX> dA(t.grad_of(an).data(), R, C);
            dA.middleCols(c0, len) += G;
        });
    }
    return out;
}

// [1 x C] -> [R x C]
inline Tensor broadcast_rows(const Tensor& a, int64_t R) {
    if (a.rows() != 1) throw NumericalError("broadcast_rows: input must have one row");
    const int C = a.cols();
    Tensor out = Tensor::zeros({int(R), C});
    for (int64_t i = 0; i < R; ++i) out.mat().row(i) = a.mat().row(0);
    if (Tape* tape = detail::result_tape({&a})) {
        out.tape = tape;
        const int id = tape->add_node(out.size());
        out.node = id;
        const int an = a.node;
        tape->set_backward(id, [=](Tape& t) {
            Eigen::Map<const MatX> G(t.grad_of(id).data(), R, C);
            Eigen::Map<MatX> dA(t.grad_of(an).data(), 1, C);
            for (int64_t i = 0; i < R; ++i) dA.row(0) += G.row(i);
        });
    }
    return out;
}

// out[i, :] = a[idx[i], :]
inline Tensor gather_rows(const Tensor& a, std::shared_ptr<const std::vector<int>> idx) {
    const int C = a.cols();
    const int64_t R = int64_t(idx->size());
    Tensor out = Tensor::zeros({int(R), C});
    for (int64_t i = 0; i < R; ++i) out.mat().row(i) = a.mat().row((*idx)[size_t(i)]);
    if (Tape* tape = detail::result_tape({&a})) {
        out.tape = tape;
        const int id = tape->add_node(out.size());
        out.node = id;
        const int an = a.node;
        tape->set_backward(id, [=, ar = a.rows()](Tape& t) {
            Eigen::Map<const MatX> G(t.grad_of(id).data(), R, C);
            Eigen::Map<MatX> dA(t.grad_of(an).data(), ar, C);
            for (int64_t i = 0; i < R; ++i) dA.row((*idx)[size_t(i)]) += G.row(i);
        });
    }
    return out;
}

// out[idx[i], :] = a[i, :]; all other rows zero. idx must not repeat.
inline Tensor scatter_rows(const Tensor& a, std::shared_ptr<const std::vector<int>> idx,
                           std::vector<int> out_shape) {
    const int C = a.cols();
    if (int64_t(idx->size()) != a.rows())
        throw NumericalError("scatter_rows: index count != input rows");
    Tensor out = Tensor::zeros(std::move(out_shape));
    if (out.cols() != C) throw NumericalError("scatter_rows: column mismatch");
    for (int64_t i = 0; i < a.rows(); ++i) out.mat().row((*idx)[size_t(i)]) = a.mat().row(i);
    if (Tape* tape = detail::result_tape({&a})) {
        out.tape = tape;
        const int id = tape->add_node(out.size());
        out.node = id;
        const int an = a.node;
        const int64_t R = a.rows();
        tape->set_backward(id, [=, oR = out.rows()](Tape& t) {
            Eigen::Map<const MatX> G(t.grad_of(id).data(), oR, C);
            Eigen::Map<MatX> dA(t.grad_of(an).data(), R, C);
            for (int64_t i = 0; i < R; ++i) dA.row(i) += G.row((*idx)[size_t(i)]);
        });
    }
    return out;
}

// y = x / (||x||_2 + eps) per row
inline Tensor normalize_rows(const Tensor& a, double eps = 1e-8) {
    const int64_t R = a.rows();
    const int C = a.cols();
    Tensor out = Tensor::zeros(a.shape);
    std::vector<double> norms(static_cast<size_t>(R));
    for (int64_t i = 0; i < R; ++i) {
        double nrm = a.mat().row(i).norm();
        norms[size_t(i)] = nrm;
        out.mat().row(i) = a.mat().row(i) / (nrm + eps);
    }
    if (Tape* tape = detail::result_tape({&a})) {
        out.tape = tape;
        const int id = tape->add_node(out.size());
        out.node = id;
        const int an = a.node;
        auto ad = a.data;
        auto nshared = std::make_shared<std::vector<double>>(std::move(norms));
        tape->set_backward(id, [=](Tape& t) {
            Eigen::Map<const MatX> G(t.grad_of(id).data(), R, C);
            Eigen::Map<const MatX> A(ad->data(), R, C);
            Eigen::Map<MatX> dA(t.grad_of(an).data(), R, C);
            for (int64_t i = 0; i < R; ++i) {
                double nrm = (*nshared)[size_t(i)];
                double r = nrm + eps;
                if (nrm < 1e-30) {
                    dA.row(i) += G.row(i) / eps;
                } else {
                    double gx = G.row(i).dot(A.row(i));
                    dA.row(i) += G.row(i) / r - A.row(i) * (gx / (r * r * nrm));
                }
            }
        });
    }
    return out;
}

// per-row L2 norm: [R x C] -> [R x 1]
inline Tensor l2norm(const Tensor& a) {
    const int64_t R = a.rows();
    const int C = a.cols();
    Tensor out = Tensor::zeros({int(R), 1});
    for (int64_t i = 0; i < R; ++i) (*out.data)[size_t(i)] = a.mat().row(i).norm();
    if (Tape* tape = detail::result_tape({&a})) {
        out.tape = tape;
        const int id = tape->add_node(R);
        out.node = id;
        const int an = a.node;
        auto ad = a.data, od = out.data;
        tape->set_backward(id, [=](Tape& t) {
            const auto& g = t.grad_of(id);
            Eigen::Map<const MatX> A(ad->data(), R, C);
            Eigen::Map<MatX> dA(t.grad_of(an).data(), R, C);
            for (int64_t i = 0; i < R; ++i) {
                double nrm = (*od)[size_t(i)];
                if (nrm > 1e-30) dA.row(i) += (g[size_t(i)] / nrm) * A.row(i);
            }
        });
    }
    return out;
}

// ---- gradient checking ----

// Central differences against the tape gradient; returns the max relative
// error with denominator max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const std::function<Tensor(Tape&, std::vector<Tensor>&)>& f,
                         std::vector<Tensor> inputs, double eps = 1e-3) {
    Tape tape;
    std::vector<Tensor> watched;
    for (auto& in : inputs) watched.push_back(tape.watch(in));
    Tensor loss = f(tape, watched);
    auto grads = tape.backward(loss);

    auto eval = [&](std::vector<Tensor>& ins) {
        Tape t;
        std::vector<Tensor> plain;
        for (auto& in : ins) plain.push_back(in);
        return f(t, plain).scalar_value();
    };

    double max_rel = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        const auto git = grads.find(watched[i].node);
        for (int64_t k = 0; k < inputs[i].size(); ++k) {
            double x0 = (*inputs[i].data)[size_t(k)];
            (*inputs[i].data)[size_t(k)] = x0 + eps;
            double fp = eval(inputs);
            (*inputs[i].data)[size_t(k)] = x0 - eps;
            double fm = eval(inputs);
            (*inputs[i].data)[size_t(k)] = x0;
            double numeric = (fp - fm) / (2.0 * eps);
            double analytic = git == grads.end() ? 0.0 : git->second[size_t(k)];
            double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace palm
