#pragma once

// Triangle meshes: validated construction, midpoint subdivision with
// attribute propagation, area-weighted vertex normals, uniform graph
// Laplacian, edge lengths and exact point-to-surface distance.

#include "palm/common.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <map>
#include <vector>

namespace palm {

struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
    // unique undirected edges as sorted (min,max) pairs, lexicographically ordered
    std::vector<std::array<int, 2>> edges;
    // per edge: adjacent face ids (1 for boundary, 2 for interior)
    std::vector<std::vector<int>> edge_faces;

    int vertex_count() const { return int(vertices.size()); }
    int face_count() const { return int(faces.size()); }
    int edge_count() const { return int(edges.size()); }

    MatX positions_matrix() const {
        MatX p(vertices.size(), 3);
        for (size_t i = 0; i < vertices.size(); ++i) p.row(i) = vertices[i].transpose();
        return p;
    }
};

inline TriMesh build_mesh(std::vector<Vec3> vertices, std::vector<std::array<int, 3>> faces) {
    if (vertices.empty() || faces.empty())
        throw DataError("build_mesh: empty vertex or face array");
    TriMesh m;
    m.vertices = std::move(vertices);
    m.faces = std::move(faces);
    const int nv = m.vertex_count();
    std::map<std::array<int, 2>, std::vector<int>> edge_map;
    for (int f = 0; f < m.face_count(); ++f) {
        const auto& tri = m.faces[f];
        for (int k = 0; k < 3; ++k) {
            if (tri[k] < 0 || tri[k] >= nv)
                throw DataError(format_msg("build_mesh: face ", f, " index ", tri[k],
                                           " out of range [0,", nv, ")"));
        }
        if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
            throw DataError(format_msg("build_mesh: degenerate face ", f));
        for (int k = 0; k < 3; ++k) {
            int a = tri[k], b = tri[(k + 1) % 3];
            edge_map[{std::min(a, b), std::max(a, b)}].push_back(f);
        }
    }
    m.edges.reserve(edge_map.size());
    m.edge_faces.reserve(edge_map.size());
    for (auto& [e, fs] : edge_map) {
        if (fs.size() > 2)
            throw DataError(format_msg("build_mesh: non-manifold edge (", e[0], ",", e[1],
                                       ") borders ", fs.size(), " faces"));
        m.edges.push_back(e);
        m.edge_faces.push_back(fs);
    }
    return m;
}

// One midpoint split per edge: V' = V + E, F' = 4F. New vertices are appended
// after the originals in edge-list order; a new vertex's attribute row is the
// mean of its edge's endpoint rows.
inline std::pair<TriMesh, MatX> subdivide(const TriMesh& mesh, const MatX& vertex_attrs) {
    if (vertex_attrs.rows() != mesh.vertex_count())
        throw DataError(format_msg("subdivide: attrs rows ", vertex_attrs.rows(),
                                   " != vertex count ", mesh.vertex_count()));
    const int nv = mesh.vertex_count();
    const int ne = mesh.edge_count();

    std::vector<Vec3> verts = mesh.vertices;
    verts.resize(size_t(nv + ne));
    MatX attrs(nv + ne, vertex_attrs.cols());
    attrs.topRows(nv) = vertex_attrs;

    std::map<std::array<int, 2>, int> midpoint;
    for (int e = 0; e < ne; ++e) {
        int a = mesh.edges[e][0], b = mesh.edges[e][1];
        verts[size_t(nv + e)] = 0.5 * (mesh.vertices[size_t(a)] + mesh.vertices[size_t(b)]);
        attrs.row(nv + e) = 0.5 * (vertex_attrs.row(a) + vertex_attrs.row(b));
        midpoint[mesh.edges[e]] = nv + e;
    }

    std::vector<std::array<int, 3>> faces;
    faces.reserve(size_t(mesh.face_count()) * 4);
    for (const auto& tri : mesh.faces) {
        int a = tri[0], b = tri[1], c = tri[2];
        int mab = midpoint.at({std::min(a, b), std::max(a, b)});
        int mbc = midpoint.at({std::min(b, c), std::max(b, c)});
        int mca = midpoint.at({std::min(c, a), std::max(c, a)});
        faces.push_back({a, mab, mca});
        faces.push_back({b, mbc, mab});
        faces.push_back({c, mca, mbc});
        faces.push_back({mab, mbc, mca});
    }
    return {build_mesh(std::move(verts), std::move(faces)), std::move(attrs)};
}

// Area-weighted face-normal accumulation. Vertices that accumulate to zero
// get +Z and, when `degenerate` is given, a set flag.
inline MatX vertex_normals(const std::vector<std::array<int, 3>>& faces, const MatX& positions,
                           std::vector<uint8_t>* degenerate = nullptr) {
    const int nv = int(positions.rows());
    MatX acc = MatX::Zero(nv, 3);
    for (const auto& tri : faces) {
        Vec3 p0 = positions.row(tri[0]), p1 = positions.row(tri[1]), p2 = positions.row(tri[2]);
        Vec3 n = (p1 - p0).cross(p2 - p0);  // 2*area * unit normal
        for (int k = 0; k < 3; ++k) acc.row(tri[k]) += n.transpose();
    }
    if (degenerate) degenerate->assign(size_t(nv), 0);
    for (int i = 0; i < nv; ++i) {
        double len = acc.row(i).norm();
        if (len < 1e-300) {
            acc.row(i) << 0.0, 0.0, 1.0;
            if (degenerate) (*degenerate)[size_t(i)] = 1;
        } else {
            acc.row(i) /= len;
        }
    }
    return acc;
}

inline MatX vertex_normals(const TriMesh& mesh, std::vector<uint8_t>* degenerate = nullptr) {
    return vertex_normals(mesh.faces, mesh.positions_matrix(), degenerate);
}

// Uniform graph Laplacian: L_ii = 1, L_ij = -1/deg(i) for neighbors j.
struct SparseLaplacian {
    std::vector<std::vector<int>> neighbors;  // per row
    std::vector<double> coeff;                // per row: -1/deg(i)

    int rows() const { return int(neighbors.size()); }

    // A = L * f
    MatX apply(const MatX& f) const {
        MatX out(f.rows(), f.cols());
        parallel_for(rows(), [&](int64_t i) {
            Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(f.cols());
            for (int j : neighbors[size_t(i)]) s += f.row(j);
            out.row(i) = f.row(i) + coeff[size_t(i)] * s;
        });
        return out;
    }

    // L^T * g (neighbor relation is symmetric; coefficients are not)
    MatX apply_transpose(const MatX& g) const {
        MatX out(g.rows(), g.cols());
        parallel_for(rows(), [&](int64_t j) {
            Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(g.cols());
            for (int i : neighbors[size_t(j)]) s += coeff[size_t(i)] * g.row(i);
            out.row(j) = g.row(j) + s;
        });
        return out;
    }
};

inline SparseLaplacian laplacian(const TriMesh& mesh) {
    SparseLaplacian lap;
    lap.neighbors.resize(size_t(mesh.vertex_count()));
    for (const auto& e : mesh.edges) {
        lap.neighbors[size_t(e[0])].push_back(e[1]);
        lap.neighbors[size_t(e[1])].push_back(e[0]);
    }
    lap.coeff.resize(size_t(mesh.vertex_count()));
    for (int i = 0; i < mesh.vertex_count(); ++i) {
        auto& nbrs = lap.neighbors[size_t(i)];
        if (nbrs.empty())
            throw DataError(format_msg("laplacian: isolated vertex ", i, " (degree 0)"));
        std::sort(nbrs.begin(), nbrs.end());
        lap.coeff[size_t(i)] = -1.0 / double(nbrs.size());
    }
    return lap;
}

inline Eigen::VectorXd edge_lengths(const TriMesh& mesh, const MatX& positions) {
    if (positions.rows() != mesh.vertex_count())
        throw DataError("edge_lengths: positions rows != vertex count");
    Eigen::VectorXd len(mesh.edge_count());
    for (int e = 0; e < mesh.edge_count(); ++e)
        len[e] = (positions.row(mesh.edges[e][0]) - positions.row(mesh.edges[e][1])).norm();
    return len;
}

// Closest point on triangle (region-classified), squared distance.
inline double point_triangle_sqdist(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    Vec3 ab = b - a, ac = c - a, ap = p - a;
    double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return (p - a).squaredNorm();
    Vec3 bp = p - b;
    double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return (p - b).squaredNorm();
    double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        double v = d1 / (d1 - d3);
        return (p - (a + v * ab)).squaredNorm();
    }
    Vec3 cp = p - c;
    double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return (p - c).squaredNorm();
    double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        double w = d2 / (d2 - d6);
        return (p - (a + w * ac)).squaredNorm();
    }
    double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + w * (c - b))).squaredNorm();
    }
    double denom = 1.0 / (va + vb + vc);
    double v = vb * denom, w = vc * denom;
    return (p - (a + ab * v + ac * w)).squaredNorm();
}

namespace detail {

// Uniform grid over triangle bboxes; queries prune cells farther than the
// current best, so the result equals the exhaustive scan.
struct TriGrid {
    Vec3 origin;
    double cell = 1.0;
    int nx = 1, ny = 1, nz = 1;
    std::vector<std::vector<int>> cells;

    static TriGrid build(const TriMesh& mesh) {
        TriGrid g;
        Vec3 lo = mesh.vertices[0], hi = mesh.vertices[0];
        for (const auto& v : mesh.vertices) {
            lo = lo.cwiseMin(v);
            hi = hi.cwiseMax(v);
        }
        Vec3 ext = (hi - lo).cwiseMax(1e-12);
        double target_cells = std::cbrt(double(std::max<size_t>(mesh.faces.size(), 1)));
        g.cell = ext.maxCoeff() / std::max(1.0, target_cells);
        g.origin = lo;
        g.nx = std::max(1, int(std::ceil(ext.x() / g.cell)));
        g.ny = std::max(1, int(std::ceil(ext.y() / g.cell)));
        g.nz = std::max(1, int(std::ceil(ext.z() / g.cell)));
        g.cells.resize(size_t(g.nx) * g.ny * g.nz);
        for (int f = 0; f < mesh.face_count(); ++f) {
            Vec3 tlo = mesh.vertices[size_t(mesh.faces[f][0])];
            Vec3 thi = tlo;
            for (int k = 1; k < 3; ++k) {
                const Vec3& v = mesh.vertices[size_t(mesh.faces[f][k])];
                tlo = tlo.cwiseMin(v);
                thi = thi.cwiseMax(v);
            }
            auto [i0, j0, k0] = g.index(tlo);
            auto [i1, j1, k1] = g.index(thi);
            for (int i = i0; i <= i1; ++i)
                for (int j = j0; j <= j1; ++j)
                    for (int k = k0; k <= k1; ++k) g.at(i, j, k).push_back(f);
        }
        return g;
    }

    std::tuple<int, int, int> index(const Vec3& p) const {
        auto clampi = [](int v, int n) { return std::max(0, std::min(v, n - 1)); };
        return {clampi(int(std::floor((p.x() - origin.x()) / cell)), nx),
                clampi(int(std::floor((p.y() - origin.y()) / cell)), ny),
                clampi(int(std::floor((p.z() - origin.z()) / cell)), nz)};
    }
    std::vector<int>& at(int i, int j, int k) {
        return cells[(size_t(k) * ny + size_t(j)) * nx + size_t(i)];
    }
    const std::vector<int>& at(int i, int j, int k) const {
        return cells[(size_t(k) * ny + size_t(j)) * nx + size_t(i)];
    }
};

}  // namespace detail

// Exact min point-to-triangle distance per query point.
inline Eigen::VectorXd point_to_surface(const TriMesh& mesh, const MatX& points) {
    auto grid = detail::TriGrid::build(mesh);
    Eigen::VectorXd dist(points.rows());
    parallel_for(points.rows(), [&](int64_t pi) {
        Vec3 p = points.row(pi);
        auto [ci, cj, ck] = grid.index(p);
        double best = std::numeric_limits<double>::infinity();
        int max_ring = std::max({grid.nx, grid.ny, grid.nz});
        for (int ring = 0; ring <= max_ring; ++ring) {
            // cells in this ring can't beat best once the ring is far enough
            if (ring > 0) {
                double ring_min = (double(ring) - 1.0) * grid.cell;
                if (ring_min * ring_min > best) break;
            }
            for (int i = std::max(0, ci - ring); i <= std::min(grid.nx - 1, ci + ring); ++i)
                for (int j = std::max(0, cj - ring); j <= std::min(grid.ny - 1, cj + ring); ++j)
                    for (int k = std::max(0, ck - ring); k <= std::min(grid.nz - 1, ck + ring);
                         ++k) {
                        bool shell = (std::max({std::abs(i - ci), std::abs(j - cj),
                                                std::abs(k - ck)}) == ring);
                        if (!shell) continue;
                        for (int f : grid.at(i, j, k)) {
                            const auto& tri = mesh.faces[size_t(f)];
                            double d = point_triangle_sqdist(p, mesh.vertices[size_t(tri[0])],
                                                             mesh.vertices[size_t(tri[1])],
                                                             mesh.vertices[size_t(tri[2])]);
                            best = std::min(best, d);
                        }
                    }
        }
        dist[pi] = std::sqrt(best);
    });
    return dist;
}

}  // namespace palm
