#pragma once

// Wavefront OBJ and binary little-endian PLY import/export. OBJ vertex colors
// use the common nonstandard "v x y z r g b" extension.

#include "palm/geometry.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>

namespace palm {

inline void write_obj(const std::string& path, const TriMesh& mesh,
                      const MatX* vertex_colors = nullptr) {
    std::ofstream os(path);
    if (!os) throw DataError("write_obj: cannot open " + path);
    char line[256];
    for (int i = 0; i < mesh.vertex_count(); ++i) {
        const Vec3& v = mesh.vertices[size_t(i)];
        if (vertex_colors) {
            std::snprintf(line, sizeof line, "v %.9g %.9g %.9g %.9g %.9g %.9g", v.x(), v.y(),
                          v.z(), (*vertex_colors)(i, 0), (*vertex_colors)(i, 1),
                          (*vertex_colors)(i, 2));
        } else {
            std::snprintf(line, sizeof line, "v %.9g %.9g %.9g", v.x(), v.y(), v.z());
        }
        os << line << "\n";
    }
    for (const auto& f : mesh.faces) os << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
}

inline TriMesh read_obj(const std::string& path, MatX* vertex_colors = nullptr) {
    std::ifstream is(path);
    if (!is) throw DataError("read_obj: cannot open " + path);
    std::vector<Vec3> verts;
    std::vector<std::array<double, 3>> colors;
    std::vector<std::array<int, 3>> faces;
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            Vec3 p;
            ls >> p.x() >> p.y() >> p.z();
            double r, g, b;
            if (ls >> r >> g >> b)
                colors.push_back({r, g, b});
            else if (!colors.empty())
                throw DataError("read_obj: mixed colored and plain vertex lines");
            verts.push_back(p);
        } else if (tag == "f") {
            std::array<int, 3> f{};
            for (int k = 0; k < 3; ++k) {
                std::string tok;
                if (!(ls >> tok)) throw DataError("read_obj: face with <3 indices");
                f[k] = std::stoi(tok.substr(0, tok.find('/'))) - 1;  // 1-based; ignore vt/vn
            }
            faces.push_back(f);
        }
    }
    if (vertex_colors) {
        if (colors.size() == verts.size()) {
            vertex_colors->resize(Eigen::Index(colors.size()), 3);
            for (size_t i = 0; i < colors.size(); ++i)
                vertex_colors->row(Eigen::Index(i)) << colors[i][0], colors[i][1], colors[i][2];
        } else {
            vertex_colors->resize(0, 3);
        }
    }
    return build_mesh(std::move(verts), std::move(faces));
}

// Binary little-endian PLY: float32 positions, uint32 face indices, optional
// uchar RGB vertex colors (values in [0,1] scaled to 0..255 on write).
inline void write_ply(const std::string& path, const TriMesh& mesh,
                      const MatX* vertex_colors = nullptr) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("write_ply: cannot open " + path);
    os << "ply\nformat binary_little_endian 1.0\n";
    os << "element vertex " << mesh.vertex_count() << "\n";
    os << "property float x\nproperty float y\nproperty float z\n";
    if (vertex_colors)
        os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    os << "element face " << mesh.face_count() << "\n";
    os << "property list uchar uint vertex_indices\nend_header\n";
    for (int i = 0; i < mesh.vertex_count(); ++i) {
        float p[3] = {float(mesh.vertices[size_t(i)].x()), float(mesh.vertices[size_t(i)].y()),
                      float(mesh.vertices[size_t(i)].z())};
        os.write(reinterpret_cast<const char*>(p), sizeof p);
        if (vertex_colors) {
            unsigned char rgb[3];
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp((*vertex_colors)(i, c), 0.0, 1.0);
                rgb[c] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
            os.write(reinterpret_cast<const char*>(rgb), 3);
        }
    }
    for (const auto& f : mesh.faces) {
        unsigned char n = 3;
        os.write(reinterpret_cast<const char*>(&n), 1);
        uint32_t idx[3] = {uint32_t(f[0]), uint32_t(f[1]), uint32_t(f[2])};
        os.write(reinterpret_cast<const char*>(idx), sizeof idx);
    }
}

inline TriMesh read_ply(const std::string& path, MatX* vertex_colors = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("read_ply: cannot open " + path);
    std::string line;
    std::getline(is, line);
    if (line != "ply") throw DataError("read_ply: not a PLY file: " + path);
    size_t nverts = 0, nfaces = 0;
    bool has_color = false, in_vertex = false;
    while (std::getline(is, line) && line != "end_header") {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian")
                throw DataError("read_ply: unsupported format " + fmt);
        } else if (tag == "element") {
            std::string what;
            ls >> what;
            in_vertex = (what == "vertex");
            ls >> (in_vertex ? nverts : nfaces);
        } else if (tag == "property" && in_vertex) {
            std::string type, name;
            ls >> type >> name;
            if (name == "red") has_color = true;
        }
    }
    std::vector<Vec3> verts(nverts);
    if (vertex_colors) vertex_colors->resize(has_color ? Eigen::Index(nverts) : 0, 3);
    for (size_t i = 0; i < nverts; ++i) {
        float p[3];
        is.read(reinterpret_cast<char*>(p), sizeof p);
        verts[i] = Vec3(p[0], p[1], p[2]);
        if (has_color) {
            unsigned char rgb[3];
            is.read(reinterpret_cast<char*>(rgb), 3);
            if (vertex_colors)
                vertex_colors->row(Eigen::Index(i)) << rgb[0] / 255.0, rgb[1] / 255.0,
                    rgb[2] / 255.0;
        }
    }
    std::vector<std::array<int, 3>> faces(nfaces);
    for (size_t f = 0; f < nfaces; ++f) {
        unsigned char n;
        is.read(reinterpret_cast<char*>(&n), 1);
        if (n != 3) throw DataError("read_ply: non-triangle face");
        uint32_t idx[3];
        is.read(reinterpret_cast<char*>(idx), sizeof idx);
        faces[f] = {int(idx[0]), int(idx[1]), int(idx[2])};
    }
    if (!is) throw DataError("read_ply: truncated file " + path);
    return build_mesh(std::move(verts), std::move(faces));
}

}  // namespace palm
