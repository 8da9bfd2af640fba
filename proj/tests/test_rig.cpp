#include "palm/rig.hpp"

#include "test_helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

using namespace palm;

namespace {
Rig default_rig() { return synth_rig({}); }
}  // namespace

TEST_CASE("synthetic rig structure", "[rig]") {
    Rig rig = default_rig();

    SECTION("default config reproduces the reference tensor shapes") {
        CHECK(rig.vertex_count() == 778);
        CHECK(rig.template_mesh.face_count() == 1538);
        CHECK(rig.joint_count() == 16);
        CHECK(rig.lbs_weights.rows() == 778);
        CHECK(rig.lbs_weights.cols() == 16);
        CHECK(rig.shape_basis.size() == 10);
        // disk topology: Euler characteristic 1, one 16-vertex boundary ring
        int chi = rig.vertex_count() - rig.template_mesh.edge_count() +
                  rig.template_mesh.face_count();
        CHECK(chi == 1);
        int boundary_edges = 0;
        for (const auto& ef : rig.template_mesh.edge_faces)
            if (ef.size() == 1) ++boundary_edges;
        CHECK(boundary_edges == 16);
    }
    SECTION("three subdivisions reach the published resolution") {
        Rig r3 = subdivide_rig(rig, 3);
        CHECK(r3.vertex_count() == 49281);
        CHECK(r3.template_mesh.face_count() == 98432);
        for (int v = 0; v < 200; ++v)
            CHECK(r3.lbs_weights.row(v * 246).sum() == Catch::Approx(1.0).margin(1e-9));
    }
    SECTION("same seed gives a bit-identical rig") {
        Rig a = synth_rig({.seed = 7});
        Rig b = synth_rig({.seed = 7});
        CHECK(a.template_mesh.positions_matrix() == b.template_mesh.positions_matrix());
        CHECK(a.lbs_weights == b.lbs_weights);
        for (int k = 0; k < 10; ++k) CHECK(a.shape_basis[size_t(k)] == b.shape_basis[size_t(k)]);
        Rig c = synth_rig({.seed = 8});
        CHECK(a.shape_basis[0] != c.shape_basis[0]);
    }
    SECTION("every weight row sums to 1") {
        for (int v = 0; v < rig.vertex_count(); ++v) {
            CHECK(rig.lbs_weights.row(v).sum() == Catch::Approx(1.0).margin(1e-9));
            CHECK(rig.lbs_weights.row(v).minCoeff() >= 0.0);
        }
    }
    SECTION("J=2 straight chain: extremal vertices are one-hot") {
        Rig r2 = synth_rig({.joints = 2});
        // wrist ring vertex (y ~ 0) belongs to the root
        CHECK(r2.lbs_weights(0, 0) == Catch::Approx(1.0).margin(1e-9));
        // tip cap apex belongs to the chain bone
        int tip = r2.vertex_count() - 1;
        CHECK(r2.lbs_weights(tip, 1) == Catch::Approx(1.0).margin(1e-9));
    }
    SECTION("template normals point outward") {
        MatX n = vertex_normals(rig.template_mesh);
        int mid = 24 * 16 + 3;  // a mid-tube vertex
        Vec3 p = rig.template_mesh.vertices[size_t(mid)];
        Vec3 radial(p.x(), 0.0, p.z());
        CHECK(radial.normalized().dot(Vec3(n.row(mid))) > 0.3);
    }
    SECTION("invalid config is rejected") {
        CHECK_THROWS_AS(synth_rig({.target_vertices = 2}), ConfigError);
        CHECK_THROWS_AS(synth_rig({.target_vertices = 778, .joints = 1}), ConfigError);
    }
    SECTION("shape basis directions are orthogonal with equal norms") {
        for (int k = 0; k < 10; ++k)
            for (int m = k + 1; m < 10; ++m) {
                double dot = 0;
                for (int v = 0; v < rig.vertex_count(); ++v)
                    dot += rig.shape_basis[size_t(k)].row(v).dot(rig.shape_basis[size_t(m)].row(v));
                CHECK(std::abs(dot) < 1e-9 * rig.shape_basis[0].squaredNorm());
            }
    }
}

TEST_CASE("forward kinematics", "[rig]") {
    Rig rig = default_rig();

    SECTION("zero pose gives identity transforms") {
        auto T = forward_kinematics(rig, Pose::rest(16));
        for (const auto& m : T) CHECK((m - Mat4::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("90-degree root rotation about z maps the +x child to +y") {
        Rig r;
        r.template_mesh = palm_test::unit_tetrahedron();
        r.joints = MatX::Zero(2, 3);
        r.joints.row(1) << 1, 0, 0;
        r.parents = {-1, 0};
        Pose p = Pose::rest(2);
        p.theta(0, 2) = M_PI / 2.0;
        auto T = forward_kinematics(r, p);
        Vec3 child_origin = T[1].topLeftCorner<3, 3>() * Vec3(r.joints.row(1)) +
                            T[1].topRightCorner<3, 1>();
        CHECK((child_origin - Vec3(0, 1, 0)).norm() < 1e-12);
    }
    SECTION("composing with the rest pose is the identity composition") {
        Rng rng(3);
        Pose p = Pose::rest(16);
        for (int j = 0; j < 16; ++j)
            for (int c = 0; c < 3; ++c) p.theta(j, c) = rng.uniform(-0.5, 0.5);
        auto T1 = forward_kinematics(rig, p);
        auto T0 = forward_kinematics(rig, Pose::rest(16));
        for (int j = 0; j < 16; ++j) {
            Mat4 composed = T1[size_t(j)] * T0[size_t(j)];
            CHECK((composed - T1[size_t(j)]).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
    SECTION("wrong pose shape is rejected") {
        CHECK_THROWS_AS(forward_kinematics(rig, Pose::rest(5)), DataError);
    }
}

TEST_CASE("linear blend skinning", "[rig]") {
    Rig rig = default_rig();
    MatX rest = rig.template_mesh.positions_matrix();
    Eigen::VectorXd beta0;

    SECTION("identity transforms and beta=0 return the rest vertices") {
        auto T = forward_kinematics(rig, Pose::rest(16));
        MatX posed = skin_lbs(rest, rig.lbs_weights, T, beta0, rig.shape_basis);
        CHECK((posed - rest).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("one-hot weight follows its bone rigidly") {
        std::vector<Mat4> T(2, Mat4::Identity());
        T[1].topRightCorner<3, 1>() = Vec3(0.5, -1, 2);
        MatX w = MatX::Zero(1, 2);
        w(0, 1) = 1.0;
        MatX v(1, 3);
        v << 1, 2, 3;
        MatX posed = skin_lbs(v, w, T, beta0, {});
        CHECK((Vec3(posed.row(0)) - Vec3(1.5, 1, 5)).norm() < 1e-12);
    }
    SECTION("0.5/0.5 blend of identity and a translation moves halfway") {
        std::vector<Mat4> T(2, Mat4::Identity());
        T[1].topRightCorner<3, 1>() = Vec3(1, 0, 0);
        MatX w = MatX::Constant(1, 2, 0.5);
        MatX v = MatX::Zero(1, 3);
        MatX posed = skin_lbs(v, w, T, beta0, {});
        CHECK((Vec3(posed.row(0)) - Vec3(0.5, 0, 0)).norm() < 1e-12);
    }
    SECTION("non-row-stochastic weights are rejected") {
        std::vector<Mat4> T(2, Mat4::Identity());
        MatX w = MatX::Constant(1, 2, 0.8);
        MatX v = MatX::Zero(1, 3);
        CHECK_THROWS_AS(skin_lbs(v, w, T, beta0, {}), NumericalError);
    }
    SECTION("shape coefficients displace along the basis before skinning") {
        auto T = forward_kinematics(rig, Pose::rest(16));
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(10);
        beta[3] = 2.0;
        MatX posed = skin_lbs(rest, rig.lbs_weights, T, beta, rig.shape_basis);
        CHECK((posed - (rest + 2.0 * rig.shape_basis[3])).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("fine mesh assembly", "[rig]") {
    Rig rig = subdivide_rig(default_rig(), 1);
    Eigen::VectorXd beta0;

    SECTION("rest-pose identity") {
        MatX posed = pose_mesh_fine(rig, MatX::Zero(rig.vertex_count(), 3), rig.lbs_weights,
                                    Pose::rest(16), beta0);
        CHECK((posed - rig.template_mesh.positions_matrix()).cwiseAbs().maxCoeff() < 1e-6);
    }
    SECTION("constant displacement under identity transforms translates") {
        MatX D = MatX::Zero(rig.vertex_count(), 3);
        D.col(0).setConstant(0.01);
        MatX posed = pose_mesh_fine(rig, D, rig.lbs_weights, Pose::rest(16), beta0);
        MatX expect = rig.template_mesh.positions_matrix();
        expect.col(0).array() += 0.01;
        CHECK((posed - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("matches a manual skin_lbs composition") {
        Rng rng(5);
        Pose p = Pose::rest(16);
        for (int j = 0; j < 16; ++j)
            for (int c = 0; c < 3; ++c) p.theta(j, c) = rng.uniform(-0.4, 0.4);
        p.root_translation = Vec3(0.01, -0.02, 0.03);
        MatX D(rig.vertex_count(), 3);
        for (int v = 0; v < rig.vertex_count(); ++v)
            for (int c = 0; c < 3; ++c) D(v, c) = rng.uniform(-0.002, 0.002);
        MatX mine = pose_mesh_fine(rig, D, rig.lbs_weights, p, beta0);
        MatX manual = skin_lbs(MatX(rig.template_mesh.positions_matrix() + D), rig.lbs_weights,
                               forward_kinematics(rig, p), beta0, rig.shape_basis);
        CHECK((mine - manual).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("rigid equivariance: rotating the rig equals rotating the output") {
        Rng rng(8);
        Mat3 R = Eigen::AngleAxisd(0.7, Vec3(1, 1, 2).normalized()).toRotationMatrix();
        Pose p = Pose::rest(16);
        for (int j = 1; j < 16; ++j)
            for (int c = 0; c < 3; ++c) p.theta(j, c) = rng.uniform(-0.3, 0.3);

        MatX posed = pose_mesh_fine(rig, MatX::Zero(rig.vertex_count(), 3), rig.lbs_weights, p,
                                    beta0);

        Rig rot = rig;
        MatX pos = rig.template_mesh.positions_matrix() * R.transpose();
        for (int v = 0; v < rot.vertex_count(); ++v)
            rot.template_mesh.vertices[size_t(v)] = pos.row(v);
        rot.joints = rig.joints * R.transpose();
        Pose prot = p;
        for (int j = 0; j < 16; ++j) prot.theta.row(j) = (R * Vec3(p.theta.row(j))).transpose();
        MatX posed_rot = pose_mesh_fine(rot, MatX::Zero(rig.vertex_count(), 3), rot.lbs_weights,
                                        prot, beta0);
        CHECK((posed_rot - posed * R.transpose()).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("rig serialization round trip", "[rig]") {
    namespace fs = std::filesystem;
    Rig rig = synth_rig({.target_vertices = 202, .joints = 16, .seed = 3});
    std::string dir = (fs::temp_directory_path() / "palm_rig_test").string();
    save_rig(dir, rig);
    Rig back = load_rig(dir);

    CHECK(back.vertex_count() == rig.vertex_count());
    CHECK(back.template_mesh.faces == rig.template_mesh.faces);
    CHECK(back.parents == rig.parents);
    CHECK((back.joints - rig.joints).cwiseAbs().maxCoeff() == 0.0);  // joints travel in JSON
    CHECK((back.template_mesh.positions_matrix() - rig.template_mesh.positions_matrix())
              .cwiseAbs()
              .maxCoeff() < 1e-6);
    CHECK((back.lbs_weights - rig.lbs_weights).cwiseAbs().maxCoeff() < 1e-6);
    for (int v = 0; v < back.vertex_count(); ++v)
        CHECK(back.lbs_weights.row(v).sum() == Catch::Approx(1.0).margin(1e-9));
    SECTION("missing manifest is a data error") {
        CHECK_THROWS_AS(load_rig(dir + "/nope"), DataError);
    }
}
