#pragma once

#include "palm/geometry.hpp"

#include <catch2/catch_amalgamated.hpp>

namespace palm_test {

inline palm::TriMesh unit_tetrahedron() {
    using palm::Vec3;
    std::vector<Vec3> v = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0.5, std::sqrt(3.0) / 2.0, 0),
                           Vec3(0.5, std::sqrt(3.0) / 6.0, std::sqrt(6.0) / 3.0)};
    std::vector<std::array<int, 3>> f = {{0, 2, 1}, {0, 1, 3}, {1, 2, 3}, {2, 0, 3}};
    return palm::build_mesh(v, f);
}

inline palm::TriMesh icosahedron() {
    using palm::Vec3;
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0},   {-1, -t, 0}, {1, -t, 0},
                           {0, -1, t}, {0, 1, t},   {0, -1, -t}, {0, 1, -t},
                           {t, 0, -1}, {t, 0, 1},   {-t, 0, -1}, {-t, 0, 1}};
    for (auto& p : v) p.normalize();
    std::vector<std::array<int, 3>> f = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
        {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
        {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
    return palm::build_mesh(v, f);
}

inline palm::TriMesh icosphere(int subdivisions) {
    palm::TriMesh m = icosahedron();
    for (int s = 0; s < subdivisions; ++s) {
        auto [m2, _] = palm::subdivide(m, palm::MatX::Zero(m.vertex_count(), 1));
        for (auto& p : m2.vertices) p.normalize();
        m = std::move(m2);
    }
    return m;
}

// flat z=0 grid (disk topology), CCW seen from +z
inline palm::TriMesh flat_grid(int nx, int ny, double spacing = 1.0) {
    using palm::Vec3;
    std::vector<Vec3> v;
    for (int j = 0; j <= ny; ++j)
        for (int i = 0; i <= nx; ++i) v.emplace_back(i * spacing, j * spacing, 0.0);
    std::vector<std::array<int, 3>> f;
    auto id = [&](int i, int j) { return j * (nx + 1) + i; };
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            f.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            f.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    return palm::build_mesh(v, f);
}

}  // namespace palm_test
