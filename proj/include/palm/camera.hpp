#pragma once

// Pinhole camera. Camera space looks down +Z, pixel (0,0) is top-left and
// pixel centers sit at integer+0.5.

#include "palm/common.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace palm {

struct Camera {
    Mat3 K = Mat3::Identity();   // [fx 0 cx; 0 fy cy; 0 0 1]
    Mat3 R = Mat3::Identity();   // world -> camera rotation
    Vec3 t = Vec3::Zero();       // world -> camera translation
    int width = 0, height = 0;

    double fx() const { return K(0, 0); }
    double fy() const { return K(1, 1); }
    double cx() const { return K(0, 2); }
    double cy() const { return K(1, 2); }

    Vec3 to_camera(const Vec3& p) const { return R * p + t; }
    Vec3 origin() const { return -R.transpose() * t; }

    // Returns (screen x, screen y, camera z); callers treat z <= 0 as behind.
    Vec3 project(const Vec3& p) const {
        Vec3 c = to_camera(p);
        return {fx() * c.x() / c.z() + cx(), fy() * c.y() / c.z() + cy(), c.z()};
    }

    Vec3 unproject(double sx, double sy, double depth) const {
        Vec3 c((sx - cx()) / fx() * depth, (sy - cy()) / fy() * depth, depth);
        return R.transpose() * (c - t);
    }

    // world-space unit direction through a pixel center
    Vec3 ray_dir(double sx, double sy) const {
        return (unproject(sx, sy, 1.0) - origin()).normalized();
    }

    // d(screen xy)/d(world p), 2x3
    Eigen::Matrix<double, 2, 3> screen_jacobian(const Vec3& p) const {
        Vec3 c = to_camera(p);
        double iz = 1.0 / c.z();
        Eigen::Matrix<double, 2, 3> d;
        d.row(0) = fx() * iz * (R.row(0) - c.x() * iz * R.row(2));
        d.row(1) = fy() * iz * (R.row(1) - c.y() * iz * R.row(2));
        return d;
    }
};

inline void project_all(const Camera& cam, const MatX& positions, MatX& screen,
                        Eigen::VectorXd& depth, std::vector<uint8_t>* behind = nullptr) {
    const int64_t n = positions.rows();
    screen.resize(n, 2);
    depth.resize(n);
    if (behind) behind->assign(size_t(n), 0);
    for (int64_t i = 0; i < n; ++i) {
        Vec3 s = cam.project(positions.row(i));
        screen(i, 0) = s.x();
        screen(i, 1) = s.y();
        depth[i] = s.z();
        if (behind && s.z() <= 0.0) (*behind)[size_t(i)] = 1;
    }
}

// Cameras are stored as a JSON array of {K: 9 row-major, Rt: 12 row-major
// [R|t], width, height}.
inline nlohmann::json camera_to_json(const Camera& c) {
    std::vector<double> k(9), rt(12);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            k[size_t(3 * i + j)] = c.K(i, j);
            rt[size_t(4 * i + j)] = c.R(i, j);
        }
    for (int i = 0; i < 3; ++i) rt[size_t(4 * i + 3)] = c.t[i];
    return {{"K", k}, {"Rt", rt}, {"width", c.width}, {"height", c.height}};
}

inline Camera camera_from_json(const nlohmann::json& j) {
    Camera c;
    auto k = j.at("K").get<std::vector<double>>();
    auto rt = j.at("Rt").get<std::vector<double>>();
    if (k.size() != 9 || rt.size() != 12) throw DataError("camera_from_json: bad K/Rt size");
    for (int i = 0; i < 3; ++i)
        for (int jj = 0; jj < 3; ++jj) {
            c.K(i, jj) = k[size_t(3 * i + jj)];
            c.R(i, jj) = rt[size_t(4 * i + jj)];
        }
    for (int i = 0; i < 3; ++i) c.t[i] = rt[size_t(4 * i + 3)];
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    if (c.fx() <= 0 || c.fy() <= 0) throw DataError("camera_from_json: fx, fy must be positive");
    return c;
}

inline void save_cameras(const std::string& path, const std::vector<Camera>& cams) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : cams) arr.push_back(camera_to_json(c));
    std::ofstream os(path);
    if (!os) throw DataError("save_cameras: cannot open " + path);
    os << arr.dump(1) << "\n";
}

inline std::vector<Camera> load_cameras(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("load_cameras: cannot open " + path);
    nlohmann::json arr = nlohmann::json::parse(is);
    std::vector<Camera> cams;
    for (const auto& j : arr) cams.push_back(camera_from_json(j));
    return cams;
}

}  // namespace palm
