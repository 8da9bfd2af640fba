#include "palm/metrics.hpp"

#include "test_helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace palm;
using namespace palm_test;

TEST_CASE("psnr", "[metrics]") {
    Tensor a = Tensor::zeros({8, 8, 3});
    Rng rng(3);
    for (int64_t i = 0; i < a.size(); ++i) (*a.data)[size_t(i)] = rng.uniform(0, 1);

    SECTION("identical images flag infinite") {
        auto r = psnr(a, a);
        CHECK(r.infinite);
    }
    SECTION("MSE 0.01 -> 20 dB and MSE 1e-4 -> 40 dB") {
        Tensor b = a;
        b.data = std::make_shared<std::vector<double>>(*a.data);
        for (auto& v : *b.data) v += 0.1;  // constant offset: MSE = 0.01
        auto r = psnr(a, b);
        CHECK_FALSE(r.infinite);
        CHECK(r.db == Catch::Approx(20.0).margin(1e-9));
        for (auto& v : *b.data) v -= 0.09;  // offset 0.01: MSE = 1e-4
        CHECK(psnr(a, b).db == Catch::Approx(40.0).margin(1e-9));
    }
    SECTION("constant offset closed form: -20 log10(eps)") {
        double eps = 0.003;
        Tensor b = a;
        b.data = std::make_shared<std::vector<double>>(*a.data);
        for (auto& v : *b.data) v += eps;
        CHECK(psnr(a, b).db == Catch::Approx(-20.0 * std::log10(eps)).margin(1e-9));
    }
    SECTION("shape mismatch is an error") {
        CHECK_THROWS_AS(psnr(a, Tensor::zeros({8, 9, 3})), NumericalError);
    }
}

TEST_CASE("point-to-surface metric", "[metrics]") {
    TriMesh sphere = icosphere(2);

    SECTION("identical meshes give zero") {
        CHECK(p2s(sphere.positions_matrix(), sphere) < 1e-12);
    }
    SECTION("plane patch at height delta") {
        TriMesh plane = flat_grid(10, 10);
        MatX pts(4, 3);
        double delta = 0.125;
        pts << 3, 3, delta, 5, 5, delta, 7, 2, delta, 2, 8, delta;
        CHECK(p2s(pts, plane) == Catch::Approx(delta).margin(1e-12));
    }
    SECTION("asymmetric by construction") {
        // a coarse mesh vs its subdivided-and-inflated version
        TriMesh coarse = icosphere(0);
        MatX inflated = 1.1 * coarse.positions_matrix();
        TriMesh big = coarse;
        for (int v = 0; v < big.vertex_count(); ++v) big.vertices[size_t(v)] = inflated.row(v);
        double ab = p2s(coarse.positions_matrix(), big);
        double ba = p2s(inflated, coarse);
        CHECK(ab != ba);
    }
}

TEST_CASE("frame-rate measurement", "[metrics]") {
    Rig base = synth_rig({.target_vertices = 150});
    Avatar av;
    {
        ModelSpec spec;
        spec.dec_lbs = {2, 16};
        spec.dec_disp = {2, 16};
        spec.dec_albedo = {2, 16};
        spec.q_latent = 4;
        spec.implicit_dim = 8;
        spec.neural = NeuralSpec{3, 16, 2, 2, 1, 4};
        av = make_avatar(base, 0, 1, spec, 0);
        av.lights[0] = ambient_light(0.9);
    }
    FrozenAvatar fz = freeze(av);
    std::vector<Pose> poses;
    for (int t = 0; t < 5; ++t) poses.push_back(make_trajectory_pose(1, 16, t, 5));

    auto cam = make_ring_cameras(1, 64, 64, 0.18)[0];
    EvalReport r64;
    bench_fps(fz, poses, cam, 20, 3, r64);
    CHECK(r64.fps > 0.0);
    CHECK(r64.embed_ms >= 0.0);

    SECTION("timing monotonicity: 64x64 is no slower than 256x256") {
        auto cam256 = make_ring_cameras(1, 256, 256, 0.18)[0];
        EvalReport r256;
        bench_fps(fz, poses, cam256, 20, 3, r256);
        CHECK(1000.0 / r64.fps <= 1000.0 / r256.fps * 1.05);
    }
    SECTION("total roughly equals the sum of the phases") {
        double total = 1000.0 / r64.fps;
        double parts = r64.embed_ms + r64.raster_ms + r64.neural_ms;
        CHECK(total == Catch::Approx(parts).epsilon(0.25));
    }
    SECTION("repeated runs are stable within 30%") {
        EvalReport again;
        bench_fps(fz, poses, cam, 20, 3, again);
        double a = 1000.0 / r64.fps, b = 1000.0 / again.fps;
        CHECK(std::abs(a - b) / std::max(a, b) < 0.30);
    }
}

TEST_CASE("image evaluation over held-out frames", "[metrics]") {
    DatasetConfig cfg;
    cfg.views = 2;
    cfg.train_frames = 2;
    cfg.holdout_frames = 1;
    cfg.width = 32;
    cfg.height = 32;
    cfg.rig_vertices = 120;
    cfg.subdiv = 0;
    cfg.seed = 11;
    cfg.truth_disp_amp = 0.0;
    auto dir = std::filesystem::temp_directory_path() / "palm_metrics_eval";
    std::filesystem::remove_all(dir);
    Dataset ds = synth_data(cfg, dir.string());
    SceneData sc = load_scene(ds);

    ModelSpec spec;
    spec.dec_lbs = {2, 16};
    spec.dec_disp = {2, 16};
    spec.dec_albedo = {2, 16};
    spec.q_latent = 4;
    spec.implicit_dim = 8;
    spec.neural = NeuralSpec{3, 16, 2, 2, 1, 4};
    Rig base = load_rig(ds.rig_dir());
    Avatar av = make_avatar(base, 0, cfg.views, spec, 11);

    // feed the avatar the exact truth: evaluation must then report a high PSNR
    init_from_fit(av.mods.albedo, load_truth_albedo(ds, av.vertex_count()));
    init_from_fit(av.mods.disp, MatX::Zero(av.vertex_count(), 3));
    av.lights = load_truth_lights(ds);

    EvalReport rep = eval_images(av, sc, "lambert", sc.holdout);
    CHECK((rep.psnr_infinite || rep.psnr_db > 35.0));
    CHECK(rep.ssim_val > 0.95);

    SECTION("geometry and albedo against the sealed truth") {
        eval_geometry(av, ds, 3, rep);
        eval_albedo(av, ds, rep);
        CHECK(rep.p2s_mean_mm >= 0.0);
        CHECK(rep.p2s_mean_mm < 0.05);  // truth displacement is zero here
        CHECK(rep.albedo_mae < 1e-6);
        CHECK(rep.p2s_template_mm == Catch::Approx(rep.p2s_mean_mm).margin(0.05));
    }
    SECTION("report serialization carries all four metric fields") {
        eval_geometry(av, ds, 3, rep);
        bench_fps(freeze(av), {sc.holdout[0].pose}, sc.cameras[0], 12, 2, rep);
        auto j = rep.to_json();
        CHECK(j.contains("psnr"));
        CHECK(j.contains("ssim"));
        CHECK(j.contains("p2s_mm"));
        CHECK(j.contains("fps"));
        CHECK(j["lpips"] == "n/a");
        std::ostringstream os;
        rep.print_table(os);
        CHECK(os.str().find("psnr") != std::string::npos);
    }
}
