#include "palm/raster.hpp"

#include "test_helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace palm;
using namespace palm_test;

namespace {

// identity-intrinsics camera: world (x, y, 1) projects to screen (x, y)
Camera screen_camera(int w, int h) {
    Camera c;
    c.K << 1, 0, 0, 0, 1, 0, 0, 0, 1;
    c.width = w;
    c.height = h;
    return c;
}

TriMesh screen_tris(const std::vector<std::array<double, 2>>& pts,
                    std::vector<std::array<int, 3>> faces, double z = 1.0) {
    std::vector<Vec3> v;
    for (auto& p : pts) v.emplace_back(p[0], p[1], z);
    return build_mesh(v, std::move(faces));
}

}  // namespace

TEST_CASE("pinhole projection", "[render]") {
    Camera c;
    c.K << 100, 0, 32, 0, 100, 24, 0, 0, 1;
    c.width = 64;
    c.height = 48;

    SECTION("optical axis lands on the principal point") {
        Vec3 s = c.project(Vec3(0, 0, 1));
        CHECK(s.x() == Catch::Approx(32.0));
        CHECK(s.y() == Catch::Approx(24.0));
        CHECK(s.z() == Catch::Approx(1.0));
    }
    SECTION("doubling fx doubles the x offset from cx") {
        Vec3 p(0.1, 0.0, 1.0);
        double off1 = c.project(p).x() - c.cx();
        Camera c2 = c;
        c2.K(0, 0) *= 2.0;
        double off2 = c2.project(p).x() - c2.cx();
        CHECK(off2 == Catch::Approx(2.0 * off1));
    }
    SECTION("unproject inverts project within 1e-9") {
        Rng rng(2);
        c.R = Eigen::AngleAxisd(0.4, Vec3(1, 2, 3).normalized()).toRotationMatrix();
        c.t = Vec3(0.1, -0.2, 2.0);
        for (int i = 0; i < 50; ++i) {
            Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
            Vec3 s = c.project(p);
            if (s.z() <= 0.1) continue;
            CHECK((c.unproject(s.x(), s.y(), s.z()) - p).norm() < 1e-9);
        }
    }
    SECTION("JSON round trip") {
        c.R = Eigen::AngleAxisd(-0.3, Vec3::UnitY()).toRotationMatrix();
        c.t = Vec3(3, 2, 1);
        Camera c2 = camera_from_json(camera_to_json(c));
        CHECK((c2.K - c.K).cwiseAbs().maxCoeff() == 0.0);
        CHECK((c2.R - c.R).cwiseAbs().maxCoeff() == 0.0);
        CHECK((c2.t - c.t).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("spherical harmonics basis", "[render]") {
    SECTION("constant band") {
        Rng rng(3);
        for (int i = 0; i < 10; ++i) {
            Vec3 n(rng.normal(), rng.normal(), rng.normal());
            if (n.norm() < 1e-6) continue;
            CHECK(sh_basis(n)[0] == Catch::Approx(0.28209479177387814));
        }
    }
    SECTION("+z direction") {
        auto y = sh_basis(Vec3(0, 0, 1));
        CHECK(y[2] == Catch::Approx(0.4886025119029199));
        CHECK(y[1] == Catch::Approx(0.0).margin(1e-15));
        CHECK(y[3] == Catch::Approx(0.0).margin(1e-15));
    }
    SECTION("zero normal is an error") { CHECK_THROWS_AS(sh_basis(Vec3::Zero()), NumericalError); }
    SECTION("Monte Carlo orthonormality within 0.02") {
        Rng rng(17);
        const int N = 100000;
        Eigen::Matrix<double, 9, 9> gram = Eigen::Matrix<double, 9, 9>::Zero();
        for (int s = 0; s < N; ++s) {
            double z = rng.uniform(-1, 1);
            double phi = rng.uniform(0, 2 * M_PI);
            double r = std::sqrt(std::max(0.0, 1 - z * z));
            auto y = sh_basis(Vec3(r * std::cos(phi), r * std::sin(phi), z));
            for (int i = 0; i < 9; ++i)
                for (int j = 0; j < 9; ++j) gram(i, j) += y[size_t(i)] * y[size_t(j)];
        }
        gram *= 4.0 * M_PI / N;
        for (int i = 0; i < 9; ++i)
            for (int j = 0; j < 9; ++j)
                CHECK(std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)) < 0.02);
    }
    SECTION("basis gradient matches finite differences of the polynomials") {
        Rng rng(5);
        for (int trial = 0; trial < 5; ++trial) {
            Vec3 n(rng.normal(), rng.normal(), rng.normal());
            n.normalize();
            auto g = sh_basis_gradient(n);
            const double eps = 1e-6;
            auto poly = [](const Vec3& v) {
                return std::array<double, 9>{
                    shc::k0,          shc::k1 * v.y(),        shc::k1 * v.z(),
                    shc::k1 * v.x(),  shc::k2 * v.x() * v.y(), shc::k2 * v.y() * v.z(),
                    shc::k20 * (3 * v.z() * v.z() - 1),        shc::k2 * v.x() * v.z(),
                    shc::k22 * (v.x() * v.x() - v.y() * v.y())};
            };
            for (int c = 0; c < 3; ++c) {
                Vec3 np = n, nm = n;
                np[c] += eps;
                nm[c] -= eps;
                auto yp = poly(np), ym = poly(nm);
                for (int k = 0; k < 9; ++k)
                    CHECK(g[size_t(k)][c] ==
                          Catch::Approx((yp[size_t(k)] - ym[size_t(k)]) / (2 * eps)).margin(1e-5));
            }
        }
    }
}

TEST_CASE("rasterization basics", "[render]") {
    SECTION("large triangle covers the frame center with unit barycentrics") {
        Camera cam = screen_camera(32, 32);
        TriMesh m = screen_tris({{-40, -40}, {100, -40}, {-40, 100}}, {{0, 1, 2}});
        FragmentBuffer frag = rasterize(cam, m, m.positions_matrix());
        int p = 16 * 32 + 16;
        REQUIRE(frag.tri[size_t(p)] == 0);
        double bsum = frag.bary[size_t(p) * 3] + frag.bary[size_t(p) * 3 + 1] +
                      frag.bary[size_t(p) * 3 + 2];
        CHECK(bsum == Catch::Approx(1.0).epsilon(1e-6));
        for (int k = 0; k < 3; ++k) CHECK(frag.bary[size_t(p) * 3 + k] >= 0.0);
    }
    SECTION("depth test: nearer triangle wins where both cover") {
        Camera cam = screen_camera(32, 32);
        std::vector<Vec3> v = {{-40, -40, 2}, {100, -40, 2}, {-40, 100, 2},
                               {-40, -40, 1}, {100, -40, 1}, {-40, 100, 1}};
        TriMesh m = build_mesh(v, {{0, 1, 2}, {3, 4, 5}});
        FragmentBuffer frag = rasterize(cam, m, m.positions_matrix());
        for (int p : frag.covered) CHECK(frag.tri[size_t(p)] == 1);
    }
    SECTION("coverage of a half-frame right triangle matches its area within 1%") {
        const int W = 64, H = 64;
        Camera cam = screen_camera(W, H);
        // general position: the hypotenuse avoids pixel centers
        TriMesh m = screen_tris({{0, 0}, {63.4, 0}, {0, 63.4}}, {{0, 1, 2}});
        FragmentBuffer frag = rasterize(cam, m, m.positions_matrix());
        double analytic = 0.5 * 63.4 * 63.4;
        CHECK(std::abs(double(frag.covered.size()) - analytic) / analytic < 0.01);
    }
    SECTION("watertight: shared diagonal through pixel centers, no gap or double cover") {
        const int W = 36, H = 36;
        Camera cam = screen_camera(W, H);
        // diagonal passes exactly through pixel centers (k+0.5, k+0.5)
        std::vector<std::array<double, 2>> q = {{2.5, 2.5}, {28.5, 4.5}, {30.5, 30.5}, {4.5, 28.5}};
        TriMesh t1 = screen_tris(q, {{0, 1, 2}});
        TriMesh t2 = screen_tris(q, {{0, 2, 3}});
        TriMesh quad = screen_tris(q, {{0, 1, 2}, {0, 2, 3}});
        FragmentBuffer f1 = rasterize(cam, t1, t1.positions_matrix());
        FragmentBuffer f2 = rasterize(cam, t2, t2.positions_matrix());
        FragmentBuffer fq = rasterize(cam, quad, quad.positions_matrix());
        int doubles = 0;
        for (int p = 0; p < W * H; ++p)
            if (f1.pixel_covered(p) && f2.pixel_covered(p)) ++doubles;
        CHECK(doubles == 0);
        CHECK(f1.covered.size() + f2.covered.size() == fq.covered.size());
    }
    SECTION("watertight on random triangulated quads") {
        Rng rng(23);
        const int W = 48, H = 48;
        Camera cam = screen_camera(W, H);
        for (int trial = 0; trial < 20; ++trial) {
            double cxq = rng.uniform(18, 30), cyq = rng.uniform(18, 30);
            std::vector<std::array<double, 2>> q;
            for (int k = 0; k < 4; ++k) {
                double ang = k * M_PI / 2 + rng.uniform(0.05, M_PI / 2 - 0.05);
                double rad = rng.uniform(8, 16);
                q.push_back({cxq + rad * std::cos(ang), cyq + rad * std::sin(ang)});
            }
            TriMesh t1 = screen_tris(q, {{0, 1, 2}});
            TriMesh t2 = screen_tris(q, {{0, 2, 3}});
            FragmentBuffer f1 = rasterize(cam, t1, t1.positions_matrix());
            FragmentBuffer f2 = rasterize(cam, t2, t2.positions_matrix());
            for (int p = 0; p < W * H; ++p)
                CHECK_FALSE((f1.pixel_covered(p) && f2.pixel_covered(p)));
            // no gap: pixel centers strictly inside the quad are covered
            auto inside_quad = [&](double sx, double sy) {
                for (int k = 0; k < 4; ++k) {
                    auto &a = q[size_t(k)], &b = q[size_t((k + 1) % 4)];
                    double e = (b[0] - a[0]) * (sy - a[1]) - (b[1] - a[1]) * (sx - a[0]);
                    if (e <= 1e-6) return false;
                }
                return true;
            };
            for (int py = 0; py < H; ++py)
                for (int px = 0; px < W; ++px)
                    if (inside_quad(px + 0.5, py + 0.5))
                        CHECK((f1.pixel_covered(py * W + px) || f2.pixel_covered(py * W + px)));
        }
    }
    SECTION("rasterization is independent of thread count") {
        Camera cam = screen_camera(64, 64);
        TriMesh s = icosphere(2);
        MatX pos = s.positions_matrix();
        for (int i = 0; i < pos.rows(); ++i) {
            pos(i, 0) = pos(i, 0) * 20 + 32;
            pos(i, 1) = pos(i, 1) * 20 + 32;
            pos(i, 2) += 3.0;
        }
        set_thread_count(1);
        FragmentBuffer a = rasterize(cam, s, pos);
        set_thread_count(2);
        FragmentBuffer b = rasterize(cam, s, pos);
        CHECK(a.tri == b.tri);
        CHECK(a.bary == b.bary);
        CHECK(a.alpha == b.alpha);
    }
}

TEST_CASE("attribute interpolation", "[render]") {
    Camera cam = screen_camera(32, 32);
    // vertex 0 sits exactly on the center of pixel (2,2) at the triangle's
    // top-left corner, which the fill rule includes
    TriMesh m = screen_tris({{2.5, 2.5}, {20.5, 2.5}, {10.5, 24.5}}, {{0, 1, 2}});
    FragmentBuffer frag = rasterize(cam, m, m.positions_matrix());

    SECTION("constant attribute stays constant on covered pixels") {
        MatX attrs = MatX::Constant(3, 2, 0.75);
        Image img = interpolate(frag, attrs, m.faces);
        for (int p : frag.covered)
            for (int c = 0; c < 2; ++c)
                CHECK(img.data[size_t(p) * 2 + c] == Catch::Approx(0.75).epsilon(1e-9));
    }
    SECTION("pixel at a vertex projection carries that vertex's attribute") {
        MatX attrs(3, 1);
        attrs << 5.0, 7.0, 9.0;
        Image img = interpolate(frag, attrs, m.faces);
        // vertex 0 projects exactly onto the center of pixel (2,2)
        int p = 2 * 32 + 2;
        REQUIRE(frag.pixel_covered(p));
        CHECK(img.data[size_t(p)] == Catch::Approx(5.0).epsilon(1e-6));
    }
    SECTION("linear in the attributes") {
        Rng rng(9);
        MatX a(3, 2), b(3, 2);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 2; ++j) {
                a(i, j) = rng.uniform(-1, 1);
                b(i, j) = rng.uniform(-1, 1);
            }
        Image ia = interpolate(frag, a, m.faces);
        Image ib = interpolate(frag, b, m.faces);
        Image iab = interpolate(frag, MatX(a + b), m.faces);
        for (size_t i = 0; i < iab.data.size(); ++i)
            CHECK(std::abs(iab.data[i] - (ia.data[i] + ib.data[i])) < 1e-9);
    }
}

TEST_CASE("lambertian shading and masks", "[render]") {
    Camera cam = screen_camera(32, 32);
    TriMesh g = flat_grid(8, 8, 6.0);
    MatX pos = g.positions_matrix();
    for (int i = 0; i < pos.rows(); ++i) {
        pos(i, 0) -= 8.0;  // grid spans (-8..40)^2, covering the frame
        pos(i, 1) -= 8.0;
        pos(i, 2) = 1.0;
    }

    SECTION("constant-band light of 1/Y00 gives white shading on white albedo") {
        SHLight l = ambient_light(1.0);
        auto [img, mask] = render_lambert(cam, g, pos, MatX::Ones(g.vertex_count(), 3), l);
        int p = 16 * 32 + 16;
        for (int c = 0; c < 3; ++c) CHECK(img.data[size_t(p) * 3 + c] == Catch::Approx(1.0));
    }
    SECTION("zero albedo renders black") {
        SHLight l = ambient_light(1.0);
        auto [img, mask] = render_lambert(cam, g, pos, MatX::Zero(g.vertex_count(), 3), l);
        CHECK(*std::max_element(img.data.begin(), img.data.end()) == 0.0);
    }
    SECTION("radiance is linear in G before the clamp") {
        Rng rng(31);
        SHLight l;
        for (auto& v : l.g) v = rng.uniform(0.5, 1.0);
        auto [img1, m1] = render_lambert(cam, g, pos, MatX::Ones(g.vertex_count(), 3), l);
        SHLight l2 = l;
        for (auto& v : l2.g) v *= 3.0;
        auto [img2, m2] = render_lambert(cam, g, pos, MatX::Ones(g.vertex_count(), 3), l2);
        int p = 16 * 32 + 16;
        CHECK(img2.data[size_t(p) * 3] == Catch::Approx(3.0 * img1.data[size_t(p) * 3]));
    }
    SECTION("mask: interior 1, outside 0, fractional band within 1px of silhouette") {
        TriMesh tri = screen_tris({{8.5, 8.5}, {24.5, 9.5}, {16.5, 24.5}}, {{0, 1, 2}});
        FragmentBuffer frag = rasterize(cam, tri, tri.positions_matrix());
        Image mask = render_mask(frag);
        CHECK(mask.at(16, 14, 0) == 1.0);
        CHECK(mask.at(1, 1, 0) == 0.0);
        for (int py = 0; py < 32; ++py)
            for (int px = 0; px < 32; ++px) {
                double a = mask.at(px, py, 0);
                if (a > 0.0 && a < 1.0) {
                    double d = 1e9;
                    std::array<std::array<double, 2>, 3> v = {
                        {{8.5, 8.5}, {24.5, 9.5}, {16.5, 24.5}}};
                    for (int k = 0; k < 3; ++k) {
                        auto &a2 = v[size_t(k)], &b2 = v[size_t((k + 1) % 3)];
                        double ex = b2[0] - a2[0], ey = b2[1] - a2[1];
                        double t = std::clamp(((px + 0.5 - a2[0]) * ex + (py + 0.5 - a2[1]) * ey) /
                                                  (ex * ex + ey * ey),
                                              0.0, 1.0);
                        d = std::min(d, std::hypot(px + 0.5 - a2[0] - t * ex,
                                                   py + 0.5 - a2[1] - t * ey));
                    }
                    CHECK(d <= 1.0);
                }
            }
    }
    SECTION("mesh fully outside the viewport renders an empty mask") {
        TriMesh tri = screen_tris({{100, 100}, {120, 100}, {110, 120}}, {{0, 1, 2}});
        FragmentBuffer frag = rasterize(cam, tri, tri.positions_matrix());
        CHECK(frag.covered.empty());
        Image mask = render_mask(frag);
        CHECK(*std::max_element(mask.data.begin(), mask.data.end()) == 0.0);
    }
}
