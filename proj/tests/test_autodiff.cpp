#include "palm/tensor.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace palm;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) (*t.data)[size_t(i)] = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("closed-form forward values", "[autodiff]") {
    CHECK(softplus(Tensor::scalar(0.0)).scalar_value() == Catch::Approx(0.6931471805599453));
    CHECK(sigmoid(Tensor::scalar(0.0)).scalar_value() == Catch::Approx(0.5));
    // stable softplus does not overflow
    CHECK(softplus(Tensor::scalar(800.0)).scalar_value() == Catch::Approx(800.0));
    CHECK(softplus(Tensor::scalar(-800.0)).scalar_value() == Catch::Approx(0.0).margin(1e-300));
}

TEST_CASE("matmul identity passes values and gradient through", "[autodiff]") {
    Rng rng(1);
    Tensor I = Tensor::from_matrix(MatX::Identity(4, 4));
    Tensor x = random_tensor(rng, {4, 3});

    Tape tape;
    Tensor xw = tape.watch(x);
    Tensor y = matmul(I, xw);
    CHECK((y.mat() - x.mat()).cwiseAbs().maxCoeff() == 0.0);

    Tensor loss = sum(y);
    auto grads = tape.backward(loss);
    for (double g : grads.at(xw.node)) CHECK(g == 1.0);
}

TEST_CASE("backward on simple graphs", "[autodiff]") {
    SECTION("loss = sum(x^2), x = (1,2,3) -> grad (2,4,6)") {
        Tensor x = Tensor::from_vector({1, 2, 3}, {3, 1});
        Tape tape;
        Tensor xw = tape.watch(x);
        auto grads = tape.backward(sum(square(xw)));
        const auto& g = grads.at(xw.node);
        CHECK(g[0] == Catch::Approx(2.0));
        CHECK(g[1] == Catch::Approx(4.0));
        CHECK(g[2] == Catch::Approx(6.0));
    }
    SECTION("fan-out y = x + x accumulates to 2") {
        Tensor x = Tensor::scalar(1.5);
        Tape tape;
        Tensor xw = tape.watch(x);
        auto grads = tape.backward(sum(add(xw, xw)));
        CHECK(grads.at(xw.node)[0] == Catch::Approx(2.0));
    }
    SECTION("relu gradient is 0 for x<0 and 0 at x=0") {
        Tensor x = Tensor::from_vector({-1.0, 0.0, 2.0}, {3, 1});
        Tape tape;
        Tensor xw = tape.watch(x);
        auto grads = tape.backward(sum(relu(xw)));
        const auto& g = grads.at(xw.node);
        CHECK(g[0] == 0.0);
        CHECK(g[1] == 0.0);
        CHECK(g[2] == 1.0);
    }
    SECTION("no grad-requiring leaves -> empty map") {
        Tensor x = Tensor::scalar(2.0);
        Tape tape;
        auto grads = tape.backward(sum(square(x)));
        CHECK(grads.empty());
    }
    SECTION("non-scalar loss is an error") {
        Tensor x = Tensor::from_vector({1, 2}, {2, 1});
        Tape tape;
        Tensor xw = tape.watch(x);
        CHECK_THROWS_AS(tape.backward(square(xw)), NumericalError);
    }
    SECTION("shape mismatch carries both shapes") {
        Tensor a = Tensor::zeros({2, 3});
        Tensor b = Tensor::zeros({4, 4});
        CHECK_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("[2x3]") &&
                                         Catch::Matchers::ContainsSubstring("[4x4]"));
    }
}

TEST_CASE("chained matmul gradient matches finite differences", "[autodiff]") {
    Rng rng(42);
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {4, 5});
    Tensor c = random_tensor(rng, {5, 2});
    double err = grad_check(
        [](Tape&, std::vector<Tensor>& in) { return sum(matmul(matmul(in[0], in[1]), in[2])); },
        {a, b, c});
    CHECK(err < 1e-6);
}

TEST_CASE("grad_check calibration", "[autodiff]") {
    Rng rng(5);
    SECTION("affine functions are exact under central differences") {
        Tensor x = random_tensor(rng, {6, 1});
        double err = grad_check(
            [](Tape&, std::vector<Tensor>& in) { return sum(scale(in[0], 3.5)); }, {x});
        CHECK(err < 1e-10);
    }
    SECTION("softplus MLP") {
        Tensor w = random_tensor(rng, {8, 8});
        Tensor x = random_tensor(rng, {8, 1});
        double err = grad_check(
            [](Tape&, std::vector<Tensor>& in) {
                return sum(softplus(matmul(in[0], in[1])));
            },
            {w, x});
        CHECK(err < 1e-5);
    }
    SECTION("a wrong backward rule is detected") {
        Tensor x = random_tensor(rng, {4, 1}, 0.5, 1.5);
        double err = grad_check(
            [](Tape& tape, std::vector<Tensor>& in) {
                // test double: forward x^2 with a backward rule claiming 3x
                const Tensor& a = in[0];
                Tensor out = Tensor::zeros(a.shape);
                for (int64_t i = 0; i < a.size(); ++i) {
                    double v = (*a.data)[size_t(i)];
                    (*out.data)[size_t(i)] = v * v;
                }
                if (a.on_tape()) {
                    out.tape = a.tape;
                    int id = a.tape->add_node(out.size());
                    out.node = id;
                    auto ad = a.data;
                    int an = a.node;
                    a.tape->set_backward(id, [=](Tape& t) {
                        const auto& g = t.grad_of(id);
                        auto& da = t.grad_of(an);
                        for (size_t i = 0; i < g.size(); ++i)
                            da[i] += 3.0 * (*ad)[i] * g[i];
                    });
                }
                return sum(out);
            },
            {x});
        CHECK(err > 1e-2);
    }
}

TEST_CASE("every registered op passes grad_check on randomized inputs", "[autodiff]") {
    // kink-bearing ops (relu, abs, clamp) are sampled away from their kinks
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed * 977 + 13);
        auto off = [&](double lo, double hi) { return random_tensor(rng, {3, 4}, lo, hi); };
        using F = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

        std::vector<std::pair<F, std::vector<Tensor>>> cases;
        auto shifted = [&](double lo, double hi) {
            Tensor t = off(lo, hi);
            return t;
        };
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(add(in[0], in[1])); },
                         {off(-1, 1), off(-1, 1)}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(sub(in[0], in[1])); },
                         {off(-1, 1), off(-1, 1)}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(mul(in[0], in[1])); },
                         {off(-1, 1), off(-1, 1)}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(div(in[0], in[1])); },
                         {off(-1, 1), off(1.0, 2.0)}});
        cases.push_back(
            {[](Tape&, std::vector<Tensor>& in) { return sum(mul(in[0], in[1])); },
             {off(-1, 1), random_tensor(rng, {3, 1})}});  // column broadcast
        cases.push_back(
            {[](Tape&, std::vector<Tensor>& in) { return sum(matmul(in[0], in[1])); },
             {random_tensor(rng, {3, 5}), random_tensor(rng, {5, 2})}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return mean(square(in[0])); },
                         {off(-1, 1)}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(square(rowsum(in[0]))); },
                         {off(-1, 1)}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(abs(in[0])); },
                         {shifted(0.5, 1.5)}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(sqrt(in[0])); },
                         {shifted(0.5, 2.0)}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(exp(in[0])); },
                         {off(-1, 1)}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(log(in[0])); },
                         {shifted(0.5, 2.0)}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(relu(in[0])); },
                         {shifted(0.3, 1.0)}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(softplus(in[0])); },
                         {off(-2, 2)}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(sigmoid(in[0])); },
                         {off(-2, 2)}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(sin(in[0])); },
                         {off(-2, 2)}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(cos(in[0])); },
                         {off(-2, 2)}});
        cases.push_back(
            {[](Tape&, std::vector<Tensor>& in) { return sum(clamp_min(in[0], 0.0)); },
             {shifted(0.4, 1.2)}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(clamp01_st(in[0])); },
                         {shifted(0.2, 0.8)}});
        cases.push_back(
            {[](Tape&, std::vector<Tensor>& in) { return sum(concat_cols({in[0], in[1]})); },
             {off(-1, 1), random_tensor(rng, {3, 2})}});
        cases.push_back(
            {[](Tape&, std::vector<Tensor>& in) { return sum(square(slice_cols(in[0], 1, 2))); },
             {off(-1, 1)}});
        cases.push_back(
            {[](Tape&, std::vector<Tensor>& in) { return sum(square(broadcast_rows(in[0], 5))); },
             {random_tensor(rng, {1, 4})}});
        auto idx = std::make_shared<const std::vector<int>>(std::vector<int>{2, 0, 2});
        cases.push_back({[idx](Tape&, std::vector<Tensor>& in) {
                             return sum(square(gather_rows(in[0], idx)));
                         },
                         {off(-1, 1)}});
        auto sidx = std::make_shared<const std::vector<int>>(std::vector<int>{4, 1, 2});
        cases.push_back({[sidx](Tape&, std::vector<Tensor>& in) {
                             return sum(square(scatter_rows(in[0], sidx, {6, 4})));
                         },
                         {off(-1, 1)}});
        cases.push_back(
            {[](Tape&, std::vector<Tensor>& in) { return sum(square(normalize_rows(in[0]))); },
             {shifted(0.5, 1.5)}});
        cases.push_back({[](Tape&, std::vector<Tensor>& in) { return sum(square(l2norm(in[0]))); },
                         {shifted(0.5, 1.5)}});

        for (auto& [f, ins] : cases) {
            double err = grad_check(f, ins);
            CHECK(err < 1e-4);
        }
    }
}

TEST_CASE("gradient accumulation is deterministic", "[autodiff]") {
    Rng rng(99);
    Tensor a = random_tensor(rng, {40, 30});
    Tensor b = random_tensor(rng, {30, 20});
    auto run = [&]() {
        Tape tape;
        Tensor aw = tape.watch(a), bw = tape.watch(b);
        Tensor y = matmul(aw, bw);
        Tensor loss = add(sum(square(y)), sum(abs(y)));
        auto g = tape.backward(loss);
        return std::pair(g.at(aw.node), g.at(bw.node));
    };
    auto [ga1, gb1] = run();
    set_thread_count(7);
    auto [ga2, gb2] = run();
    set_thread_count(2);
    CHECK(ga1 == ga2);  // bitwise
    CHECK(gb1 == gb2);
}
