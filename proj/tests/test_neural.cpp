#include "palm/neural.hpp"

#include "test_helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace palm;
using namespace palm_test;

namespace {

Camera screen_camera(int w, int h, double cx_off = 0.0, double cy_off = 0.0) {
    Camera c;
    c.K << 1, 0, cx_off, 0, 1, cy_off, 0, 0, 1;
    c.width = w;
    c.height = h;
    return c;
}

struct TinyScene {
    TriMesh mesh;
    RenderTopology rt;
    MatX positions, normals, latents;
    Camera cam;
    std::shared_ptr<const FragmentBuffer> frag;

    explicit TinyScene(int res = 24) : cam(screen_camera(res, res)) {
        mesh = build_mesh({Vec3(4.2, 4.2, 1), Vec3(19.2, 5.2, 1), Vec3(11.2, 19.2, 1)},
                          {{0, 1, 2}});
        rt = RenderTopology::from_mesh(mesh);
        positions = mesh.positions_matrix();
        normals = vertex_normals(mesh);
        Rng rng(5);
        latents = MatX(3, 20);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 20; ++j) latents(i, j) = rng.uniform(-1, 1);
        frag = std::make_shared<const FragmentBuffer>(rasterize(cam, mesh, positions));
    }
};

}  // namespace

TEST_CASE("positional encoding", "[neural]") {
    SECTION("zero input: sines 0, cosines 1") {
        MatX v = MatX::Zero(2, 3);
        MatX e = posenc(v, 4);
        REQUIRE(e.cols() == 2 * 4 * 3);
        for (int j = 0; j < 4; ++j)
            for (int c = 0; c < 3; ++c) {
                CHECK(e(0, 2 * j * 3 + c) == 0.0);
                CHECK(e(0, (2 * j + 1) * 3 + c) == 1.0);
            }
    }
    SECTION("output length is 2 * freqs * k") {
        MatX v = MatX::Random(5, 2);
        CHECK(posenc(v, 7).cols() == 2 * 7 * 2);
    }
    SECTION("v = 0.5 at j = 0 gives sin = 1, cos = 0") {
        MatX v(1, 1);
        v << 0.5;
        MatX e = posenc(v, 1);
        CHECK(e(0, 0) == Catch::Approx(1.0).margin(1e-12));
        CHECK(e(0, 1) == Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("neural renderer output contract", "[neural]") {
    TinyScene sc;
    NeuralSpec spec;
    spec.depth = 4;
    spec.width = 32;
    spec.skip_layer = 3;
    NeuralRenderer nr = make_neural_renderer(3, 20 + spec.q_render, 10.0, spec, 7);

    SECTION("zero-initialized output layer gives 0.5 gray on covered pixels") {
        Tensor img = neural_render(nr, NeuralParams::plain(nr), sc.cam, sc.frag, sc.rt,
                                   sc.positions, sc.normals, sc.latents);
        REQUIRE(img.shape == std::vector<int>({24, 24, 3}));
        for (int p : sc.frag->covered)
            for (int c = 0; c < 3; ++c)
                CHECK((*img.data)[size_t(p) * 3 + size_t(c)] == Catch::Approx(0.5));
        // uncovered pixels take the background
        CHECK((*img.data)[0] == 0.0);
    }
    SECTION("output stays in [0,1] for random weights") {
        Rng rng(11);
        for (auto* p : nr.parameters())
            for (int64_t i = 0; i < p->size(); ++i) (*p->data)[size_t(i)] = rng.normal();
        Tensor img = neural_render(nr, NeuralParams::plain(nr), sc.cam, sc.frag, sc.rt,
                                   sc.positions, sc.normals, sc.latents);
        for (double v : *img.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    SECTION("deterministic for frozen weights") {
        Tensor a = neural_render(nr, NeuralParams::plain(nr), sc.cam, sc.frag, sc.rt,
                                 sc.positions, sc.normals, sc.latents);
        Tensor b = neural_render(nr, NeuralParams::plain(nr), sc.cam, sc.frag, sc.rt,
                                 sc.positions, sc.normals, sc.latents);
        CHECK(*a.data == *b.data);
    }
}

TEST_CASE("gradients reach the MLP and rendering latents only", "[neural]") {
    TinyScene sc;
    NeuralSpec spec;
    spec.depth = 3;
    spec.width = 16;
    spec.skip_layer = 2;
    spec.freq_x = 2;
    spec.freq_d = 1;
    NeuralRenderer nr = make_neural_renderer(3, 20 + spec.q_render, 10.0, spec, 9);
    Rng rng(13);
    for (int64_t i = 0; i < nr.W.back().size(); ++i)
        (*nr.W.back().data)[size_t(i)] = 0.1 * rng.normal();

    Tape tape;
    // watch a stand-in for the embedding latents: it must receive NO gradient
    Tensor q_embed = tape.watch(Tensor::from_matrix(sc.latents));
    NeuralParams np = NeuralParams::watched(nr, tape);
    Tensor img = neural_render(nr, np, sc.cam, sc.frag, sc.rt, sc.positions, sc.normals,
                               q_embed.detached().mat());
    auto grads = tape.backward(sum(img));

    CHECK(grads.find(q_embed.node) == grads.end());  // detached: no gradient at all
    CHECK(grads.count(np.Q_render.node) == 1);
    double qg = 0;
    for (double v : grads.at(np.Q_render.node)) qg += std::abs(v);
    CHECK(qg > 0.0);
    for (auto& w : np.W) CHECK(grads.count(w.node) == 1);
}

TEST_CASE("MLP gradient matches finite differences", "[neural]") {
    TinyScene sc;
    NeuralSpec spec;
    spec.depth = 3;
    spec.width = 8;
    spec.skip_layer = 2;
    spec.freq_x = 1;
    spec.freq_d = 1;
    spec.q_render = 4;
    NeuralRenderer nr = make_neural_renderer(3, 20 + spec.q_render, 10.0, spec, 21);
    Rng rng(17);
    for (int64_t i = 0; i < nr.W.back().size(); ++i)
        (*nr.W.back().data)[size_t(i)] = 0.2 * rng.normal();
    // keep hidden pre-activations away from the relu kink so the FD probe
    // stays on one side
    for (size_t l = 0; l + 1 < nr.b.size(); ++l)
        for (int64_t i = 0; i < nr.b[l].size(); ++i) (*nr.b[l].data)[size_t(i)] = 0.15;

    double err = grad_check(
        [&](Tape&, std::vector<Tensor>& in) {
            NeuralParams np;
            np.Q_render = in[0];
            np.W = {in[1], in[2], in[3]};
            np.b = {nr.b[0], nr.b[1], nr.b[2]};
            return sum(square(neural_render(nr, np, sc.cam, sc.frag, sc.rt, sc.positions,
                                            sc.normals, sc.latents)));
        },
        {nr.Q_render, nr.W[0], nr.W[1], nr.W[2]}, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("per-pixel independence: cropped window equals the crop", "[neural]") {
    TinyScene sc(32);
    NeuralSpec spec;
    spec.depth = 4;
    spec.width = 16;
    spec.skip_layer = 3;
    NeuralRenderer nr = make_neural_renderer(3, 20 + spec.q_render, 10.0, spec, 25);
    Rng rng(19);
    for (auto* p : nr.parameters())
        for (int64_t i = 0; i < p->size(); ++i) (*p->data)[size_t(i)] = 0.3 * rng.normal();

    Tensor full = neural_render(nr, NeuralParams::plain(nr), sc.cam, sc.frag, sc.rt,
                                sc.positions, sc.normals, sc.latents);

    // 16x16 window at offset (6, 5): same pixel grid, shifted principal point
    const int x0 = 6, y0 = 5;
    Camera crop_cam = screen_camera(16, 16, -x0, -y0);
    auto crop_frag =
        std::make_shared<const FragmentBuffer>(rasterize(crop_cam, sc.mesh, sc.positions));
    Tensor crop = neural_render(nr, NeuralParams::plain(nr), crop_cam, crop_frag, sc.rt,
                                sc.positions, sc.normals, sc.latents);

    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) {
                double a = (*full.data)[((size_t(y + y0) * 32) + size_t(x + x0)) * 3 + size_t(c)];
                double b = (*crop.data)[((size_t(y) * 16) + size_t(x)) * 3 + size_t(c)];
                CHECK(std::abs(a - b) < 1e-9);
            }
}
