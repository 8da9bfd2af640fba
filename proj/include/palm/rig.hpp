#pragma once

// Synthetic articulated rig with the structure of a parametric hand model:
// template mesh (disk topology, open wrist ring), kinematic tree, row-
// stochastic LBS weights, and a small orthogonal shape basis. The default
// configuration yields exactly 778 vertices and 1538 faces. Model units are
// meters.

#include "palm/geometry.hpp"
#include "palm/mesh_io.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

namespace palm {

struct Rig {
    TriMesh template_mesh;
    MatX joints;              // J x 3 rest positions
    std::vector<int> parents; // parents[0] == -1, parents[j] < j
    MatX lbs_weights;         // V x J, rows sum to 1
    std::vector<MatX> shape_basis;  // 10 blendshapes, each V x 3
    uint64_t seed = 0;

    int joint_count() const { return int(joints.rows()); }
    int vertex_count() const { return template_mesh.vertex_count(); }
};

struct Pose {
    MatX theta;  // J x 3 axis-angle (radians); row 0 is the global rotation
    Vec3 root_translation = Vec3::Zero();

    static Pose rest(int joints) {
        Pose p;
        p.theta = MatX::Zero(joints, 3);
        return p;
    }
};

// Rodrigues with a series fallback near zero rotation.
inline Mat3 axis_angle_to_matrix(const Vec3& w) {
    double theta2 = w.squaredNorm();
    double theta = std::sqrt(theta2);
    double s, c1;  // sin(t)/t and (1-cos(t))/t^2
    if (theta < 1e-8) {
        s = 1.0 - theta2 / 6.0;
        c1 = 0.5 - theta2 / 24.0;
    } else {
        s = std::sin(theta) / theta;
        c1 = (1.0 - std::cos(theta)) / theta2;
    }
    Mat3 K;
    K << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
    return Mat3::Identity() + s * K + c1 * (K * K);
}

// Per-joint skinning transforms (rest space -> posed space); identity at the
// rest pose.
inline std::vector<Mat4> forward_kinematics(const Rig& rig, const Pose& pose) {
    const int J = rig.joint_count();
    if (pose.theta.rows() != J || pose.theta.cols() != 3)
        throw DataError(format_msg("forward_kinematics: pose has ", pose.theta.rows(),
                                   " rows, rig has ", J, " joints"));
    std::vector<Mat4> world(size_t(J), Mat4::Identity());
    for (int j = 0; j < J; ++j) {
        Mat3 R = axis_angle_to_matrix(pose.theta.row(j));
        Vec3 rest_j = rig.joints.row(j);
        Mat4 local = Mat4::Identity();
        local.topLeftCorner<3, 3>() = R;
        if (rig.parents[size_t(j)] < 0) {
            local.topRightCorner<3, 1>() = rest_j + pose.root_translation;
        } else {
            Vec3 rest_p = rig.joints.row(rig.parents[size_t(j)]);
            local.topRightCorner<3, 1>() = rest_j - rest_p;
        }
        world[size_t(j)] =
            rig.parents[size_t(j)] < 0 ? local : world[size_t(rig.parents[size_t(j)])] * local;
    }
    std::vector<Mat4> skin(static_cast<size_t>(J));
    for (int j = 0; j < J; ++j) {
        Mat4 unrest = Mat4::Identity();
        unrest.topRightCorner<3, 1>() = -Vec3(rig.joints.row(j));
        skin[size_t(j)] = world[size_t(j)] * unrest;
    }
    return skin;
}

inline void validate_weight_rows(const MatX& weights, double tol = 1e-6) {
    for (int i = 0; i < weights.rows(); ++i) {
        double s = weights.row(i).sum();
        if (std::abs(s - 1.0) > tol || weights.row(i).minCoeff() < -1e-9)
            throw NumericalError(format_msg("lbs weights: row ", i,
                                            " is not row-stochastic (sum ", s, ", min ",
                                            weights.row(i).minCoeff(), ")"));
    }
}

// v = sum_j W_vj * T_j * (v_rest + shape_basis_v * beta)
inline MatX skin_lbs(const MatX& rest_vertices, const MatX& weights,
                     const std::vector<Mat4>& transforms, const Eigen::VectorXd& beta,
                     const std::vector<MatX>& shape_basis) {
    const int64_t V = rest_vertices.rows();
    const int J = int(transforms.size());
    if (weights.rows() != V || weights.cols() != J)
        throw DataError(format_msg("skin_lbs: weights ", weights.rows(), "x", weights.cols(),
                                   " vs V=", V, " J=", J));
    if (beta.size() != 0 && size_t(beta.size()) != shape_basis.size())
        throw DataError("skin_lbs: beta length != shape basis count");
    validate_weight_rows(weights);

    MatX shaped = rest_vertices;
    for (int k = 0; k < beta.size(); ++k)
        if (beta[k] != 0.0) shaped += beta[k] * shape_basis[size_t(k)];

    MatX out(V, 3);
    parallel_for(V, [&](int64_t v) {
        Vec3 p = shaped.row(v);
        Vec3 acc = Vec3::Zero();
        for (int j = 0; j < J; ++j) {
            double w = weights(v, j);
            if (w == 0.0) continue;
            const Mat4& T = transforms[size_t(j)];
            acc += w * (T.topLeftCorner<3, 3>() * p + T.topRightCorner<3, 1>());
        }
        out.row(v) = acc;
    });
    return out;
}

// Skin the displaced subdivided template with predicted weights.
inline MatX pose_mesh_fine(const Rig& subdivided, const MatX& displacements, const MatX& weights,
                           const Pose& pose, const Eigen::VectorXd& beta) {
    if (displacements.rows() != subdivided.vertex_count())
        throw DataError("pose_mesh_fine: displacement rows != subdivided vertex count");
    MatX rest = subdivided.template_mesh.positions_matrix() + displacements;
    return skin_lbs(rest, weights, forward_kinematics(subdivided, pose), beta,
                    subdivided.shape_basis);
}

// ---- synthetic rig generation ----

struct SynthRigConfig {
    int target_vertices = 778;
    int joints = 16;
    uint64_t seed = 0;
    double length = 0.18;  // meters, wrist to tip
};

namespace detail {

// tube of `rings` x `cols` plus a 10-vertex cap; exactly 16*rings+10 vertices
// when cols == 16
struct PaddleTopology {
    std::vector<Vec3> uv;  // (u in [0,2pi), v in [0,1], cap flag)
    std::vector<std::array<int, 3>> faces;
    int rings, cols;
};

inline PaddleTopology paddle_topology(int rings, int cols) {
    PaddleTopology topo;
    topo.rings = rings;
    topo.cols = cols;
    for (int r = 0; r < rings; ++r)
        for (int c = 0; c < cols; ++c)
            topo.uv.emplace_back(2.0 * M_PI * c / cols, double(r) / (rings - 1), 0.0);
    auto vid = [&](int r, int c) { return r * cols + ((c % cols) + cols) % cols; };
    for (int r = 0; r + 1 < rings; ++r)
        for (int c = 0; c < cols; ++c) {
            int a = vid(r, c), b = vid(r, c + 1), a1 = vid(r + 1, c), b1 = vid(r + 1, c + 1);
            topo.faces.push_back({a, b1, b});
            topo.faces.push_back({a, a1, b1});
        }
    // cap: 16-ring -> 8-ring -> 2 apex vertices (10 extra vertices, 34 faces)
    if (cols != 16) throw ConfigError("paddle_topology: cap construction expects 16 columns");
    const int last = (rings - 1) * cols;
    const int ring8 = rings * cols;  // 8 vertices
    for (int c = 0; c < 8; ++c)
        topo.uv.emplace_back(2.0 * M_PI * (2 * c + 0.5) / cols, 1.05, 1.0);
    const int apex = ring8 + 8;  // 2 vertices
    topo.uv.emplace_back(M_PI * 0.5, 1.1, 2.0);
    topo.uv.emplace_back(M_PI * 1.5, 1.1, 2.0);
    for (int c = 0; c < 8; ++c) {
        int o0 = last + 2 * c, o1 = last + (2 * c + 1) % cols, o2 = last + (2 * c + 2) % cols;
        int i0 = ring8 + c, i1 = ring8 + (c + 1) % 8;
        topo.faces.push_back({o0, i0, o1});
        topo.faces.push_back({o1, i1, o2});
        topo.faces.push_back({o1, i0, i1});
    }
    // 8-gon with 2 interior vertices: 10 faces
    auto i8 = [&](int c) { return ring8 + (c % 8); };
    int a = apex, b = apex + 1;
    topo.faces.push_back({i8(0), a, i8(1)});
    topo.faces.push_back({i8(1), a, i8(2)});
    topo.faces.push_back({i8(2), a, i8(3)});
    topo.faces.push_back({i8(4), b, i8(5)});
    topo.faces.push_back({i8(5), b, i8(6)});
    topo.faces.push_back({i8(6), b, i8(7)});
    topo.faces.push_back({i8(3), b, i8(4)});
    topo.faces.push_back({i8(3), a, b});
    topo.faces.push_back({i8(7), a, i8(0)});
    topo.faces.push_back({i8(7), b, a});
    return topo;
}

}  // namespace detail

inline Rig synth_rig(const SynthRigConfig& cfg) {
    if (cfg.target_vertices < 4 || cfg.joints < 2)
        throw ConfigError(format_msg("synth_rig: need target_vertices >= 4 and joints >= 2, got ",
                                     cfg.target_vertices, ", ", cfg.joints));
    const int cols = 16;
    int rings = std::max(3, int(std::lround((cfg.target_vertices - 10.0) / cols)));
    auto topo = detail::paddle_topology(rings, cols);

    const double L = cfg.length;
    const int J = cfg.joints;
    Rng rng(mix_seed(cfg.seed, 0x9a));

    // fingers begin past v=0.55; 5 radial lobes give the paddle its scallops
    auto radius = [&](double u, double v) {
        double base = 0.22 * L * (0.65 + 0.6 * std::sin(M_PI * std::min(1.0, v * 1.15)));
        double lobe = v > 0.55 ? 1.0 + 0.22 * std::cos(5.0 * u) * ((v - 0.55) / 0.45) : 1.0;
        return base * lobe;
    };
    std::vector<Vec3> verts;
    verts.reserve(topo.uv.size());
    for (const auto& q : topo.uv) {
        double u = q.x(), v = std::min(q.y(), 1.0), cap = q.z();
        double shrink = cap == 0.0 ? 1.0 : (cap == 1.0 ? 0.55 : 0.2);
        double y = L * (cap == 0.0 ? v : (cap == 1.0 ? 1.015 : 1.03));
        double r = radius(u, v) * shrink;
        verts.emplace_back(r * std::cos(u), y, 0.35 * r * std::sin(u));
    }
    TriMesh mesh = build_mesh(std::move(verts), topo.faces);

    // kinematic tree: root at the wrist; 5 forward chains when J allows
    MatX joints(J, 3);
    std::vector<int> parents(size_t(J), 0);
    parents[0] = -1;
    joints.row(0) << 0.0, 0.02 * L, 0.0;
    const int chains = (J - 1) >= 5 ? 5 : 1;
    const int per_chain = (J - 1) / chains;
    int extra = (J - 1) - chains * per_chain;
    int id = 1;
    for (int f = 0; f < chains; ++f) {
        int links = per_chain + (f < extra ? 1 : 0);
        double spread = chains == 1 ? 0.0 : (f - (chains - 1) / 2.0) / ((chains - 1) / 2.0);
        for (int l = 0; l < links; ++l) {
            double t = 0.45 + 0.5 * double(l + 1) / links;
            joints.row(id) << spread * 0.14 * L * (0.5 + 0.5 * double(l + 1) / links), t * L, 0.0;
            parents[size_t(id)] = l == 0 ? 0 : id - 1;
            ++id;
        }
    }

    // compactly supported distance falloff against bone segments (shrunk at
    // the parent end); vertices outside every support become one-hot on the
    // nearest bone, so chain extremes are exactly one-hot
    const double sigma = 0.1 * L;
    MatX weights(mesh.vertex_count(), J);
    for (int v = 0; v < mesh.vertex_count(); ++v) {
        Vec3 p = mesh.vertices[size_t(v)];
        double sum = 0.0;
        int nearest = 0;
        double nearest_d = std::numeric_limits<double>::infinity();
        for (int j = 0; j < J; ++j) {
            Vec3 b = joints.row(j);
            Vec3 a = parents[size_t(j)] < 0 ? Vec3(b - Vec3(0, 0.15 * L, 0))
                                            : Vec3(joints.row(parents[size_t(j)]));
            if (parents[size_t(j)] >= 0) a += 0.25 * (b - a);
            Vec3 ab = b - a;
            double t = ab.squaredNorm() > 0 ? std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0)
                                            : 0.0;
            double d = (p - (a + t * ab)).norm();
            if (d < nearest_d) {
                nearest_d = d;
                nearest = j;
            }
            double w = d < 2.5 * sigma ? std::exp(-(d * d) / (sigma * sigma)) : 0.0;
            weights(v, j) = w;
            sum += w;
        }
        if (sum > 0.0)
            weights.row(v) /= sum;
        else
            weights(v, nearest) = 1.0;
    }

    // small orthogonal shape basis from smooth random fields
    std::vector<MatX> basis;
    const int V = mesh.vertex_count();
    MatX flat(10, V * 3);
    for (int k = 0; k < 10; ++k) {
        Vec3 dir(rng.normal(), rng.normal(), rng.normal());
        Vec3 freq(rng.uniform(2, 9), rng.uniform(2, 9), rng.uniform(2, 9));
        double phase = rng.uniform(0, 2 * M_PI);
        dir.normalize();
        for (int v = 0; v < V; ++v) {
            const Vec3& p = mesh.vertices[size_t(v)];
            double s = std::sin(freq.dot(p) / L + phase);
            for (int c = 0; c < 3; ++c) flat(k, v * 3 + c) = s * dir[c];
        }
    }
    for (int k = 0; k < 10; ++k) {  // Gram-Schmidt
        for (int m = 0; m < k; ++m) flat.row(k) -= flat.row(k).dot(flat.row(m)) * flat.row(m);
        flat.row(k).normalize();
    }
    const double amp = 0.02 * L * std::sqrt(double(V));
    for (int k = 0; k < 10; ++k) {
        MatX b(V, 3);
        for (int v = 0; v < V; ++v)
            for (int c = 0; c < 3; ++c) b(v, c) = amp * flat(k, v * 3 + c);
        basis.push_back(std::move(b));
    }

    Rig rig;
    rig.template_mesh = std::move(mesh);
    rig.joints = std::move(joints);
    rig.parents = std::move(parents);
    rig.lbs_weights = std::move(weights);
    rig.shape_basis = std::move(basis);
    rig.seed = cfg.seed;
    return rig;
}

// Midpoint-subdivide the rig's template, propagating weights and shape basis.
inline Rig subdivide_rig(const Rig& rig, int passes) {
    Rig out = rig;
    for (int s = 0; s < passes; ++s) {
        const int J = out.joint_count();
        MatX attrs(out.vertex_count(), J + 30);
        attrs.leftCols(J) = out.lbs_weights;
        for (int k = 0; k < 10; ++k) attrs.middleCols(J + 3 * k, 3) = out.shape_basis[size_t(k)];
        auto [mesh2, attrs2] = subdivide(out.template_mesh, attrs);
        out.template_mesh = std::move(mesh2);
        out.lbs_weights = attrs2.leftCols(J);
        for (int k = 0; k < 10; ++k) out.shape_basis[size_t(k)] = attrs2.middleCols(J + 3 * k, 3);
    }
    return out;
}

// ---- serialization: JSON manifest + raw little-endian blobs ----

namespace detail {

template <typename T>
void write_blob(const std::string& path, const T* data, size_t count) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("write_blob: cannot open " + path);
    os.write(reinterpret_cast<const char*>(data), std::streamsize(count * sizeof(T)));
}

template <typename T>
std::vector<T> read_blob(const std::string& path, size_t expect_count) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw DataError("read_blob: cannot open " + path);
    size_t bytes = size_t(is.tellg());
    if (bytes != expect_count * sizeof(T))
        throw DataError(format_msg("read_blob: ", path, " has ", bytes, " bytes, expected ",
                                   expect_count * sizeof(T)));
    std::vector<T> out(expect_count);
    is.seekg(0);
    is.read(reinterpret_cast<char*>(out.data()), std::streamsize(bytes));
    return out;
}

inline std::vector<float> to_f32(const MatX& m) {
    std::vector<float> out(size_t(m.rows()) * size_t(m.cols()));
    for (int64_t i = 0; i < m.rows(); ++i)
        for (int64_t j = 0; j < m.cols(); ++j) out[size_t(i * m.cols() + j)] = float(m(i, j));
    return out;
}

}  // namespace detail

inline void save_rig(const std::string& dir, const Rig& rig) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const int V = rig.vertex_count(), J = rig.joint_count();

    auto tmpl = detail::to_f32(rig.template_mesh.positions_matrix());
    detail::write_blob(dir + "/template.f32", tmpl.data(), tmpl.size());
    std::vector<uint32_t> faces;
    for (const auto& f : rig.template_mesh.faces)
        for (int k = 0; k < 3; ++k) faces.push_back(uint32_t(f[size_t(k)]));
    detail::write_blob(dir + "/faces.u32", faces.data(), faces.size());
    auto w = detail::to_f32(rig.lbs_weights);
    detail::write_blob(dir + "/weights.f32", w.data(), w.size());
    std::vector<float> basis;
    for (const auto& b : rig.shape_basis) {
        auto bf = detail::to_f32(b);
        basis.insert(basis.end(), bf.begin(), bf.end());
    }
    detail::write_blob(dir + "/shape_basis.f32", basis.data(), basis.size());

    nlohmann::json j{{"format", "palm-rig-v1"},
                     {"units", "m"},
                     {"vertices", V},
                     {"faces", rig.template_mesh.face_count()},
                     {"joint_parents", rig.parents},
                     {"seed", rig.seed},
                     {"blobs",
                      {{"template", "template.f32"},
                       {"faces", "faces.u32"},
                       {"weights", "weights.f32"},
                       {"shape_basis", "shape_basis.f32"}}}};
    nlohmann::json joints = nlohmann::json::array();
    for (int i = 0; i < J; ++i)
        joints.push_back({rig.joints(i, 0), rig.joints(i, 1), rig.joints(i, 2)});
    j["joints"] = joints;
    std::ofstream os(dir + "/rig.json");
    if (!os) throw DataError("save_rig: cannot open " + dir + "/rig.json");
    os << j.dump(1) << "\n";
}

inline Rig load_rig(const std::string& dir) {
    std::ifstream is(dir + "/rig.json");
    if (!is) throw DataError("load_rig: cannot open " + dir + "/rig.json");
    nlohmann::json j = nlohmann::json::parse(is);
    if (j.value("format", "") != "palm-rig-v1") throw DataError("load_rig: unknown format");
    const int V = j.at("vertices").get<int>();
    const int F = j.at("faces").get<int>();
    Rig rig;
    rig.seed = j.at("seed").get<uint64_t>();
    rig.parents = j.at("joint_parents").get<std::vector<int>>();
    const int J = int(rig.parents.size());
    rig.joints.resize(J, 3);
    for (int i = 0; i < J; ++i)
        for (int c = 0; c < 3; ++c) rig.joints(i, c) = j.at("joints")[size_t(i)][size_t(c)];

    auto tmpl = detail::read_blob<float>(dir + "/" + j["blobs"]["template"].get<std::string>(),
                                         size_t(V) * 3);
    auto faces = detail::read_blob<uint32_t>(dir + "/" + j["blobs"]["faces"].get<std::string>(),
                                             size_t(F) * 3);
    auto w = detail::read_blob<float>(dir + "/" + j["blobs"]["weights"].get<std::string>(),
                                      size_t(V) * size_t(J));
    auto basis = detail::read_blob<float>(
        dir + "/" + j["blobs"]["shape_basis"].get<std::string>(), size_t(V) * 30);

    std::vector<Vec3> verts(static_cast<size_t>(V));
    for (int v = 0; v < V; ++v)
        verts[size_t(v)] = Vec3(tmpl[size_t(v) * 3], tmpl[size_t(v) * 3 + 1],
                                tmpl[size_t(v) * 3 + 2]);
    std::vector<std::array<int, 3>> f(static_cast<size_t>(F));
    for (int i = 0; i < F; ++i)
        f[size_t(i)] = {int(faces[size_t(i) * 3]), int(faces[size_t(i) * 3 + 1]),
                        int(faces[size_t(i) * 3 + 2])};
    rig.template_mesh = build_mesh(std::move(verts), std::move(f));
    rig.lbs_weights.resize(V, J);
    for (int v = 0; v < V; ++v)
        for (int jj = 0; jj < J; ++jj) rig.lbs_weights(v, jj) = w[size_t(v) * J + jj];
    // re-normalize: f32 storage loses a few ulps of the row sums
    for (int v = 0; v < V; ++v) rig.lbs_weights.row(v) /= rig.lbs_weights.row(v).sum();
    for (int k = 0; k < 10; ++k) {
        MatX b(V, 3);
        for (int v = 0; v < V; ++v)
            for (int c = 0; c < 3; ++c) b(v, c) = basis[size_t(k) * V * 3 + size_t(v) * 3 + c];
        rig.shape_basis.push_back(std::move(b));
    }
    return rig;
}

}  // namespace palm
