#pragma once

// Synthetic multi-view dataset: a ground-truth avatar (procedural pose-
// dependent displacement field, creased albedo, per-view SH lights) rendered
// to PNG images and masks, plus the sealed truth for evaluation only.
//
// Layout: <root>/{dataset.json, cameras.json, rig/, frames/NNNN/{pose.json,
// view_MM.png, mask_MM.png}, truth/{albedo.f32, lights.json,
// frames/NNNN/disp.f32}}

#include "palm/image_io.hpp"
#include "palm/raster.hpp"
#include "palm/rig.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace palm {

struct DatasetConfig {
    int views = 8;
    int train_frames = 16;
    int holdout_frames = 8;
    int width = 128, height = 128;
    int rig_vertices = 202;
    int rig_joints = 16;
    int subdiv = 1;
    uint64_t seed = 0;
    double truth_disp_amp = 0.008;  // meters
};

struct DatasetFrame {
    int index = 0;
    Pose pose;
    std::vector<std::string> view_paths;
    std::vector<std::string> mask_paths;
};

struct Dataset {
    std::string root;
    DatasetConfig cfg;
    std::vector<Camera> cameras;
    std::vector<DatasetFrame> train;
    std::vector<DatasetFrame> holdout;

    std::string rig_dir() const { return root + "/rig"; }
    std::string truth_dir() const { return root + "/truth"; }
};

namespace detail {

inline std::string frame_dir(const std::string& root, int index) {
    std::ostringstream os;
    os << root << "/frames/" << std::setw(4) << std::setfill('0') << index;
    return os.str();
}

inline void save_pose(const std::string& path, const Pose& pose) {
    nlohmann::json j;
    nlohmann::json theta = nlohmann::json::array();
    for (int r = 0; r < pose.theta.rows(); ++r)
        theta.push_back({pose.theta(r, 0), pose.theta(r, 1), pose.theta(r, 2)});
    j["theta"] = theta;
    j["root_translation"] = {pose.root_translation.x(), pose.root_translation.y(),
                             pose.root_translation.z()};
    std::ofstream os(path);
    if (!os) throw DataError("save_pose: cannot open " + path);
    os << j.dump(1) << "\n";
}

inline Pose load_pose(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("load_pose: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(is);
    Pose p;
    const auto& theta = j.at("theta");
    p.theta.resize(int(theta.size()), 3);
    for (size_t r = 0; r < theta.size(); ++r)
        for (int c = 0; c < 3; ++c) p.theta(int(r), c) = theta[r][size_t(c)];
    if (j.contains("root_translation"))
        for (int c = 0; c < 3; ++c) p.root_translation[c] = j["root_translation"][size_t(c)];
    return p;
}

}  // namespace detail

// The procedural truth displacement field: normal-direction sinusoids of the
// rest positions, modulated by smooth functions of the joint angles.
struct TruthDisplacementField {
    double amp = 0.008;
    double length_scale = 0.18;
    std::vector<Vec3> spatial_dir;   // wave vector per component
    std::vector<double> spatial_phase;
    std::vector<Eigen::VectorXd> pose_proj;  // sparse projections of theta
    std::vector<double> pose_phase;

    static TruthDisplacementField make(uint64_t seed, int theta_dim, double length,
                                       double amp) {
        TruthDisplacementField f;
        f.amp = amp;
        f.length_scale = length;
        Rng rng(mix_seed(seed, 0x7fd));
        for (int k = 0; k < 3; ++k) {
            f.spatial_dir.emplace_back(rng.uniform(3, 11), rng.uniform(3, 11),
                                       rng.uniform(3, 11));
            f.spatial_phase.push_back(rng.uniform(0, 2 * M_PI));
            Eigen::VectorXd proj = Eigen::VectorXd::Zero(theta_dim);
            for (int pick = 0; pick < 3; ++pick)
                proj[rng.uniform_int(theta_dim)] = rng.uniform(-1, 1);
            f.pose_proj.push_back(proj);
            f.pose_phase.push_back(rng.uniform(0, 2 * M_PI));
        }
        return f;
    }

    MatX evaluate(const MatX& rest_positions, const MatX& rest_normals,
                  const Pose& pose) const {
        Eigen::VectorXd theta_flat(pose.theta.rows() * 3);
        for (int j = 0; j < pose.theta.rows(); ++j)
            for (int c = 0; c < 3; ++c) theta_flat[j * 3 + c] = pose.theta(j, c);
        MatX out = MatX::Zero(rest_positions.rows(), 3);
        for (size_t k = 0; k < spatial_dir.size(); ++k) {
            double mod = std::sin(pose_proj[k].dot(theta_flat) + pose_phase[k]);
            for (int64_t v = 0; v < rest_positions.rows(); ++v) {
                double s = std::sin(spatial_dir[k].dot(rest_positions.row(v)) / length_scale +
                                    spatial_phase[k]);
                out.row(v) += amp * s * mod * rest_normals.row(v);
            }
        }
        return out;
    }
};

inline MatX truth_albedo(const MatX& rest_positions, double length, uint64_t seed) {
    Rng rng(mix_seed(seed, 0xa1b));
    Vec3 base(0.78, 0.55, 0.45);
    Vec3 freq(rng.uniform(15, 25), rng.uniform(25, 40), rng.uniform(10, 20));
    double phase = rng.uniform(0, 2 * M_PI);
    MatX rho(rest_positions.rows(), 3);
    for (int64_t v = 0; v < rest_positions.rows(); ++v) {
        Vec3 p = rest_positions.row(v);
        double crease = 0.5 + 0.5 * std::sin(freq.y() * p.y() / length + phase) *
                                  std::cos(freq.x() * p.x() / length);
        double shade = 1.0 - 0.30 * crease;
        for (int c = 0; c < 3; ++c) rho(v, c) = std::clamp(base[c] * shade, 0.05, 0.95);
    }
    return rho;
}

inline std::vector<Camera> make_ring_cameras(int n, int width, int height, double length) {
    std::vector<Camera> cams;
    Vec3 center(0, 0.55 * length, 0);
    double radius = 2.6 * length;
    for (int i = 0; i < n; ++i) {
        double az = 2.0 * M_PI * i / n;
        double el = (i % 2 == 0 ? 1.0 : -1.0) * 0.35;
        Vec3 eye = center + radius * Vec3(std::sin(az) * std::cos(el), std::sin(el),
                                          std::cos(az) * std::cos(el));
        Vec3 fwd = (center - eye).normalized();
        Vec3 world_up(0, 1, 0);
        if (std::abs(fwd.dot(world_up)) > 0.99) world_up = Vec3(1, 0, 0);
        Vec3 right = fwd.cross(world_up).normalized();
        Vec3 down = fwd.cross(right).normalized();
        Camera cam;
        cam.width = width;
        cam.height = height;
        double f = 1.35 * width;
        cam.K << f, 0, width / 2.0, 0, f, height / 2.0, 0, 0, 1;
        cam.R.row(0) = right.transpose();
        cam.R.row(1) = down.transpose();
        cam.R.row(2) = fwd.transpose();
        cam.t = -cam.R * eye;
        cams.push_back(cam);
    }
    return cams;
}

// smooth per-joint sinusoidal trajectories; frame t of `total`
inline Pose make_trajectory_pose(uint64_t seed, int joints, int t, int total) {
    Rng rng(mix_seed(seed, 0x90e));
    Pose p = Pose::rest(joints);
    double u = double(t) / double(std::max(1, total - 1));
    for (int j = 0; j < joints; ++j)
        for (int c = 0; c < 3; ++c) {
            double amp = (j == 0 ? 0.25 : 0.45) * rng.uniform(0.2, 1.0);
            double freq = rng.uniform(0.6, 1.6);
            double phase = rng.uniform(0, 2 * M_PI);
            p.theta(j, c) = amp * std::sin(2.0 * M_PI * freq * u + phase);
        }
    return p;
}

inline std::vector<SHLight> make_truth_lights(uint64_t seed, int views) {
    std::vector<SHLight> lights;
    for (int i = 0; i < views; ++i) {
        Rng rng(mix_seed(seed, 0x11, uint64_t(i)));
        SHLight l = ambient_light(rng.uniform(0.78, 0.92));
        for (int k = 1; k < 4; ++k) l.g[size_t(k)] = rng.uniform(-0.22, 0.22);
        for (int k = 4; k < 9; ++k) l.g[size_t(k)] = rng.uniform(-0.05, 0.05);
        lights.push_back(l);
    }
    return lights;
}

inline Dataset synth_data(const DatasetConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    fs::create_directories(out_dir + "/frames");
    fs::create_directories(out_dir + "/truth/frames");

    Rig base = synth_rig({cfg.rig_vertices, cfg.rig_joints, cfg.seed, 0.18});
    save_rig(out_dir + "/rig", base);
    Rig fine = subdivide_rig(base, cfg.subdiv);
    const double length = 0.18;

    std::vector<Camera> cams = make_ring_cameras(cfg.views, cfg.width, cfg.height, length);
    save_cameras(out_dir + "/cameras.json", cams);

    std::vector<SHLight> lights = make_truth_lights(cfg.seed, cfg.views);
    {
        nlohmann::json lj = nlohmann::json::array();
        for (const auto& l : lights) lj.push_back(l.g);
        std::ofstream os(out_dir + "/truth/lights.json");
        os << lj.dump(1) << "\n";
    }

    MatX rest = fine.template_mesh.positions_matrix();
    MatX rest_normals = vertex_normals(fine.template_mesh);
    auto field = TruthDisplacementField::make(cfg.seed, cfg.rig_joints * 3, length,
                                              cfg.truth_disp_amp);
    MatX rho = truth_albedo(rest, length, cfg.seed);
    {
        auto rho32 = detail::to_f32(rho);
        detail::write_blob(out_dir + "/truth/albedo.f32", rho32.data(), rho32.size());
    }

    const int total = cfg.train_frames + cfg.holdout_frames;
    nlohmann::json holdout_list = nlohmann::json::array();
    Dataset ds;
    ds.root = out_dir;
    ds.cfg = cfg;
    ds.cameras = cams;

    for (int t = 0; t < total; ++t) {
        // every third frame is held out (interleaved split)
        bool is_holdout = (t % 3 == 2) && int(holdout_list.size()) < cfg.holdout_frames;
        Pose pose = make_trajectory_pose(cfg.seed, cfg.rig_joints, t, total);
        std::string fdir = detail::frame_dir(out_dir, t);
        fs::create_directories(fdir);
        detail::save_pose(fdir + "/pose.json", pose);

        MatX disp = field.evaluate(rest, rest_normals, pose);
        {
            fs::create_directories(out_dir + "/truth/frames");
            std::ostringstream os;
            os << out_dir << "/truth/frames/" << std::setw(4) << std::setfill('0') << t;
            fs::create_directories(os.str());
            auto d32 = detail::to_f32(disp);
            detail::write_blob(os.str() + "/disp.f32", d32.data(), d32.size());
        }
        MatX posed = pose_mesh_fine(fine, disp, fine.lbs_weights, pose, {});

        DatasetFrame frame;
        frame.index = t;
        frame.pose = pose;
        MatX normals = vertex_normals(fine.template_mesh.faces, posed);
        for (int i = 0; i < cfg.views; ++i) {
            FragmentBuffer frag = rasterize(cams[size_t(i)], fine.template_mesh, posed);
            Image n_px = interpolate(frag, normals, fine.template_mesh.faces);
            Image a_px = interpolate(frag, rho, fine.template_mesh.faces);
            Image img = shade_lambert(a_px, lights[size_t(i)], n_px, frag);
            // masks are exact binary coverage
            Image mask(cfg.width, cfg.height, 1);
            for (int p : frag.covered) mask.data[size_t(p)] = 1.0;
            std::ostringstream vp, mp;
            vp << fdir << "/view_" << std::setw(2) << std::setfill('0') << i << ".png";
            mp << fdir << "/mask_" << std::setw(2) << std::setfill('0') << i << ".png";
            save_png(vp.str(), img);
            save_png(mp.str(), mask);
            frame.view_paths.push_back(vp.str());
            frame.mask_paths.push_back(mp.str());
        }
        if (is_holdout) {
            holdout_list.push_back(t);
            ds.holdout.push_back(frame);
        } else {
            ds.train.push_back(frame);
        }
    }

    nlohmann::json manifest{{"format", "palm-dataset-v1"},
                            {"views", cfg.views},
                            {"train_frames", cfg.train_frames},
                            {"holdout_frames", cfg.holdout_frames},
                            {"total_frames", total},
                            {"width", cfg.width},
                            {"height", cfg.height},
                            {"rig_vertices", cfg.rig_vertices},
                            {"rig_joints", cfg.rig_joints},
                            {"subdiv", cfg.subdiv},
                            {"seed", cfg.seed},
                            {"truth_disp_amp", cfg.truth_disp_amp},
                            {"holdout", holdout_list}};
    std::ofstream os(out_dir + "/dataset.json");
    os << manifest.dump(1) << "\n";
    return ds;
}

inline Dataset load_dataset(const std::string& root) {
    namespace fs = std::filesystem;
    std::ifstream is(root + "/dataset.json");
    if (!is) throw DataError("load_dataset: cannot open " + root + "/dataset.json");
    nlohmann::json j = nlohmann::json::parse(is);
    if (j.value("format", "") != "palm-dataset-v1")
        throw DataError("load_dataset: unknown format");
    Dataset ds;
    ds.root = root;
    ds.cfg.views = j.at("views");
    ds.cfg.train_frames = j.at("train_frames");
    ds.cfg.holdout_frames = j.at("holdout_frames");
    ds.cfg.width = j.at("width");
    ds.cfg.height = j.at("height");
    ds.cfg.rig_vertices = j.at("rig_vertices");
    ds.cfg.rig_joints = j.at("rig_joints");
    ds.cfg.subdiv = j.at("subdiv");
    ds.cfg.seed = j.at("seed");
    ds.cfg.truth_disp_amp = j.at("truth_disp_amp");
    ds.cameras = load_cameras(root + "/cameras.json");
    std::vector<int> holdout = j.at("holdout").get<std::vector<int>>();
    const int total = j.at("total_frames");
    for (int t = 0; t < total; ++t) {
        DatasetFrame frame;
        frame.index = t;
        std::string fdir = detail::frame_dir(root, t);
        frame.pose = detail::load_pose(fdir + "/pose.json");
        for (int i = 0; i < ds.cfg.views; ++i) {
            std::ostringstream vp, mp;
            vp << fdir << "/view_" << std::setw(2) << std::setfill('0') << i << ".png";
            mp << fdir << "/mask_" << std::setw(2) << std::setfill('0') << i << ".png";
            if (!fs::exists(vp.str()) || !fs::exists(mp.str()))
                throw DataError("load_dataset: missing image " + vp.str());
            frame.view_paths.push_back(vp.str());
            frame.mask_paths.push_back(mp.str());
        }
        bool is_holdout = std::find(holdout.begin(), holdout.end(), t) != holdout.end();
        (is_holdout ? ds.holdout : ds.train).push_back(frame);
    }
    return ds;
}

// sealed truth accessors (evaluation only)
inline MatX load_truth_albedo(const Dataset& ds, int fine_vertices) {
    auto raw = detail::read_blob<float>(ds.truth_dir() + "/albedo.f32",
                                        size_t(fine_vertices) * 3);
    MatX rho(fine_vertices, 3);
    for (int v = 0; v < fine_vertices; ++v)
        for (int c = 0; c < 3; ++c) rho(v, c) = raw[size_t(v) * 3 + size_t(c)];
    return rho;
}

inline MatX load_truth_disp(const Dataset& ds, int frame_index, int fine_vertices) {
    std::ostringstream os;
    os << ds.truth_dir() << "/frames/" << std::setw(4) << std::setfill('0') << frame_index
       << "/disp.f32";
    auto raw = detail::read_blob<float>(os.str(), size_t(fine_vertices) * 3);
    MatX d(fine_vertices, 3);
    for (int v = 0; v < fine_vertices; ++v)
        for (int c = 0; c < 3; ++c) d(v, c) = raw[size_t(v) * 3 + size_t(c)];
    return d;
}

inline std::vector<SHLight> load_truth_lights(const Dataset& ds) {
    std::ifstream is(ds.truth_dir() + "/lights.json");
    if (!is) throw DataError("load_truth_lights: missing truth lights");
    nlohmann::json j = nlohmann::json::parse(is);
    std::vector<SHLight> lights;
    for (const auto& e : j) {
        SHLight l;
        for (int k = 0; k < 9; ++k) l.g[size_t(k)] = e[size_t(k)];
        lights.push_back(l);
    }
    return lights;
}

}  // namespace palm
