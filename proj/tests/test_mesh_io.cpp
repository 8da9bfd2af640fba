#include "palm/mesh_io.hpp"

#include "test_helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

using namespace palm;
using namespace palm_test;

namespace {
std::string tmp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "palm_io_test";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}
}  // namespace

TEST_CASE("OBJ round trip with vertex colors", "[mesh_io]") {
    TriMesh m = icosphere(1);
    Rng rng(4);
    MatX colors(m.vertex_count(), 3);
    for (int i = 0; i < colors.rows(); ++i)
        for (int j = 0; j < 3; ++j) colors(i, j) = rng.uniform(0, 1);

    std::string path = tmp_path("sphere.obj");
    write_obj(path, m, &colors);
    MatX colors2;
    TriMesh m2 = read_obj(path, &colors2);

    REQUIRE(m2.vertex_count() == m.vertex_count());
    REQUIRE(m2.face_count() == m.face_count());
    CHECK(m2.faces == m.faces);
    double vmax = 0.0;
    for (int i = 0; i < m.vertex_count(); ++i)
        vmax = std::max(vmax, (m.vertices[size_t(i)] - m2.vertices[size_t(i)]).norm());
    CHECK(vmax < 1e-7);
    REQUIRE(colors2.rows() == colors.rows());
    CHECK((colors - colors2).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("PLY binary round trip", "[mesh_io]") {
    TriMesh m = unit_tetrahedron();
    std::string path = tmp_path("tet.ply");

    SECTION("positions and faces") {
        write_ply(path, m);
        TriMesh m2 = read_ply(path);
        REQUIRE(m2.vertex_count() == 4);
        CHECK(m2.faces == m.faces);
        for (int i = 0; i < 4; ++i)
            CHECK((m.vertices[size_t(i)] - m2.vertices[size_t(i)]).norm() < 1e-6);
    }
    SECTION("optional uchar colors are quantized to 8 bits") {
        MatX colors(4, 3);
        colors << 0, 0, 0, 1, 1, 1, 0.5, 0.25, 0.75, 0.2, 0.4, 0.6;
        write_ply(path, m, &colors);
        MatX colors2;
        read_ply(path, &colors2);
        REQUIRE(colors2.rows() == 4);
        CHECK((colors - colors2).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-9);
    }
    SECTION("garbage file is rejected") {
        std::ofstream(path) << "not a ply";
        CHECK_THROWS_AS(read_ply(path), DataError);
    }
}
