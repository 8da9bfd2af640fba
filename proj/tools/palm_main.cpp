// palm: pose-conditioned avatar pipeline over a synthetic articulated rig.
//
// Subcommands: synth-data, init, train-embed, train-neural, render, animate,
// eval, bench. Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical
// abort; each failure prints one "error: <kind>: <reason>" line on stderr.

#include "palm/palm.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace palm;

namespace {

struct RunPaths {
    std::string root;
    std::string config() const { return root + "/config.json"; }
    std::string ckpt_dir() const { return root + "/checkpoints"; }
    std::string log_csv() const { return root + "/logs/train.csv"; }
    std::string renders() const { return root + "/renders"; }
};

std::string find_checkpoint(const RunPaths& run, const std::vector<std::string>& prefixes) {
    for (const auto& prefix : prefixes) {
        std::string final_path = run.ckpt_dir() + "/" + prefix + "_final";
        if (fs::exists(final_path + ".json")) return final_path;
        int best = -1;
        if (fs::exists(run.ckpt_dir()))
            for (const auto& e : fs::directory_iterator(run.ckpt_dir())) {
                std::string name = e.path().filename().string();
                std::string tag = prefix + "_";
                if (name.rfind(tag, 0) == 0 && name.size() > tag.size() + 5 &&
                    name.substr(name.size() - 5) == ".json") {
                    std::string num = name.substr(tag.size(), name.size() - tag.size() - 5);
                    try {
                        best = std::max(best, std::stoi(num));
                    } catch (...) {
                    }
                }
            }
        if (best >= 0) return run.ckpt_dir() + "/" + prefix + "_" + std::to_string(best);
        if (prefix == "init" && fs::exists(run.ckpt_dir() + "/init.json"))
            return run.ckpt_dir() + "/init";
    }
    throw DataError("no checkpoint found under " + run.ckpt_dir());
}

struct LoadedRun {
    RunConfig cfg;
    Dataset ds;
    Avatar av;
    TrainState state;
};

LoadedRun load_run(const RunPaths& run, const std::vector<std::string>& ckpt_prefixes) {
    LoadedRun lr{RunConfig::load(run.config()), {}, {}, {}};
    if (lr.cfg.threads > 0) set_thread_count(lr.cfg.threads);
    lr.ds = load_dataset(lr.cfg.data_dir);
    Rig base = load_rig(lr.ds.rig_dir());
    lr.av = make_avatar(base, lr.ds.cfg.subdiv, lr.ds.cfg.views, lr.cfg.model, lr.cfg.seed);
    lr.state = load_run_checkpoint(find_checkpoint(run, ckpt_prefixes), lr.av);
    return lr;
}

SHLight load_light_override(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("light override: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(is);
    const auto& arr = j.is_array() ? j : j.at("g");
    if (arr.size() != 9) throw DataError("light override: need 9 SH coefficients");
    SHLight l;
    for (int k = 0; k < 9; ++k) l.g[size_t(k)] = arr[size_t(k)];
    return l;
}

void write_render_outputs(const std::string& out_dir, const std::string& stem, const Image& img,
                          Avatar& av, const MatX& positions, const Pose& pose) {
    fs::create_directories(out_dir);
    save_png(out_dir + "/" + stem + ".png", img);
    TriMesh mesh = av.fine.template_mesh;
    for (int v = 0; v < av.vertex_count(); ++v) mesh.vertices[size_t(v)] = positions.row(v);
    PredictedFeatures feat = predict_all(av.mods, pose, av.fine.lbs_weights);
    MatX colors = feat.albedo.mat();
    write_obj(out_dir + "/" + stem + ".obj", mesh, &colors);
    write_ply(out_dir + "/" + stem + ".ply", mesh, &colors);
}

int cmd_synth_data(const std::string& config_path, const std::string& out_dir) {
    RunConfig cfg = RunConfig::load(config_path);
    if (cfg.threads > 0) set_thread_count(cfg.threads);
    synth_data(cfg.dataset, out_dir);
    std::cout << "dataset written to " << out_dir << "\n";
    return 0;
}

int cmd_init(const std::string& config_path, const std::string& data_dir,
             const std::string& run_dir) {
    RunConfig cfg = RunConfig::load(config_path);
    cfg.data_dir = data_dir;
    if (cfg.threads > 0) set_thread_count(cfg.threads);
    RunPaths run{run_dir};
    fs::create_directories(run.ckpt_dir());
    cfg.save(run.config());

    Dataset ds = load_dataset(data_dir);
    SceneData sc = load_scene(ds);
    Rig base = load_rig(ds.rig_dir());
    Avatar av = make_avatar(base, ds.cfg.subdiv, ds.cfg.views, cfg.model, cfg.seed);

    TrainLogger log(run.log_csv(), false);
    stage_init(av, sc, cfg.schedule.stage_init_iters, cfg.adam, &log);

    TrainState state;
    state.stage = "init";
    state.epoch = cfg.schedule.stage_init_iters;
    state.seed = cfg.seed;
    state.adam.cfg = cfg.adam;
    save_run_checkpoint(run.ckpt_dir() + "/init", av, state);
    std::cout << "initialization complete; checkpoint at " << run.ckpt_dir() << "/init\n";
    return 0;
}

int cmd_train_embed(const std::string& run_dir, bool resume) {
    RunPaths run{run_dir};
    LoadedRun lr = load_run(run, resume ? std::vector<std::string>{"embed", "init"}
                                        : std::vector<std::string>{"init"});
    SceneData sc = load_scene(lr.ds);
    TrainLogger log(run.log_csv(), true);
    stage_embed(lr.av, sc, lr.state, lr.cfg.schedule, lr.cfg.weights, lr.cfg.adam, &log,
                run.ckpt_dir());
    std::cout << "embedding training complete at epoch " << lr.state.epoch << "\n";
    return 0;
}

int cmd_train_neural(const std::string& run_dir, bool resume) {
    RunPaths run{run_dir};
    LoadedRun lr = load_run(run, resume ? std::vector<std::string>{"neural", "embed"}
                                        : std::vector<std::string>{"embed"});
    SceneData sc = load_scene(lr.ds);
    TrainLogger log(run.log_csv(), true);
    stage_neural(lr.av, sc, lr.state, lr.cfg.schedule, lr.cfg.weights, lr.cfg.adam, &log,
                 run.ckpt_dir());
    std::cout << "neural training complete at epoch " << lr.state.epoch << "\n";
    return 0;
}

int cmd_render(const std::string& run_dir, const std::string& pose_file, int view,
               const std::string& light_file, const std::string& renderer,
               const std::string& out_dir) {
    RunPaths run{run_dir};
    LoadedRun lr = load_run(run, {"neural", "embed", "init"});
    if (view < 0 || view >= int(lr.ds.cameras.size()))
        throw ConfigError(format_msg("render: view ", view, " out of range [0,",
                                     lr.ds.cameras.size(), ")"));
    Pose pose = palm::detail::load_pose(pose_file);
    if (pose.theta.rows() != lr.av.joint_count())
        throw DataError("render: pose has the wrong joint count");
    SHLight light;
    bool have_light = false;
    if (!light_file.empty()) {
        light = load_light_override(light_file);
        have_light = true;
    } else if (view < int(lr.av.lights.size())) {
        light = lr.av.lights[size_t(view)];
        have_light = true;
    }
    MatX positions;
    Image img = render_avatar_view(lr.av, lr.ds.cameras[size_t(view)], pose, renderer,
                                   have_light ? &light : nullptr, &positions);
    std::string out = out_dir.empty() ? run.renders() : out_dir;
    write_render_outputs(out, "render", img, lr.av, positions, pose);
    std::cout << "wrote " << out << "/render.png (+.obj/.ply)\n";
    return 0;
}

int cmd_animate(const std::string& run_dir, const std::string& seq_file, int inbetweens,
                int view, const std::string& renderer, const std::string& out_dir) {
    RunPaths run{run_dir};
    LoadedRun lr = load_run(run, {"neural", "embed", "init"});
    std::ifstream is(seq_file);
    if (!is) throw DataError("animate: cannot open " + seq_file);
    nlohmann::json seq = nlohmann::json::parse(is);
    if (!seq.is_array() || seq.empty()) throw DataError("animate: need a JSON array of poses");

    std::vector<Pose> keys;
    for (const auto& e : seq) {
        Pose p = Pose::rest(lr.av.joint_count());
        const auto& theta = e.at("theta");
        if (int(theta.size()) != lr.av.joint_count())
            throw DataError("animate: pose has the wrong joint count");
        for (size_t r = 0; r < theta.size(); ++r)
            for (int c = 0; c < 3; ++c) p.theta(int(r), c) = theta[r][size_t(c)];
        if (e.contains("root_translation"))
            for (int c = 0; c < 3; ++c) p.root_translation[c] = e["root_translation"][size_t(c)];
        keys.push_back(p);
    }
    std::string out = out_dir.empty() ? run.renders() + "/animate" : out_dir;
    fs::create_directories(out);
    const Camera& cam = lr.ds.cameras[size_t(view)];
    int frame_idx = 0;
    auto emit = [&](const Pose& p) {
        Image img = render_avatar_view(lr.av, cam, p, renderer, nullptr);
        std::ostringstream name;
        name << out << "/" << std::setw(4) << std::setfill('0') << frame_idx++ << ".png";
        save_png(name.str(), img);
    };
    for (size_t k = 0; k + 1 < keys.size(); ++k) {
        for (int s = 0; s <= inbetweens; ++s) {
            double u = double(s) / (inbetweens + 1);
            Pose p = keys[k];
            p.theta = (1.0 - u) * keys[k].theta + u * keys[k + 1].theta;
            p.root_translation =
                (1.0 - u) * keys[k].root_translation + u * keys[k + 1].root_translation;
            emit(p);
        }
    }
    emit(keys.back());
    std::cout << "wrote " << frame_idx << " frames to " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& split,
             const std::string& renderer) {
    RunPaths run{run_dir};
    LoadedRun lr = load_run(run, {"neural", "embed", "init"});
    SceneData sc = load_scene(lr.ds);
    const auto& frames = split == "train" ? sc.train : sc.holdout;
    std::string use_renderer = renderer;
    if (use_renderer.empty())
        use_renderer = lr.state.stage == "neural" ? "neural" : "lambert";

    EvalReport rep = eval_images(lr.av, sc, use_renderer, frames);
    if (fs::exists(lr.ds.truth_dir() + "/albedo.f32")) {
        eval_geometry(lr.av, lr.ds, 3, rep);
        eval_albedo(lr.av, lr.ds, rep);
    }
    std::vector<Pose> poses;
    for (const auto& f : frames) poses.push_back(f.pose);
    bench_fps(freeze(lr.av), poses, sc.cameras[0], 100, 10, rep);

    rep.print_table(std::cout);
    std::ofstream os(run.root + "/eval.json");
    os << rep.to_json().dump(1) << "\n";
    std::cout << "report written to " << run.root << "/eval.json\n";
    return 0;
}

int cmd_bench(const std::string& run_dir, int frames, int threads) {
    RunPaths run{run_dir};
    LoadedRun lr = load_run(run, {"neural", "embed", "init"});
    if (threads > 0) set_thread_count(threads);
    SceneData sc = load_scene(lr.ds);
    std::vector<Pose> poses;
    for (const auto& f : sc.holdout) poses.push_back(f.pose);
    if (poses.empty())
        for (const auto& f : sc.train) poses.push_back(f.pose);
    EvalReport rep;
    bench_fps(freeze(lr.av), poses, sc.cameras[0], frames, 10, rep);
    rep.print_table(std::cout);
    std::cout << rep.to_json().dump(1) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"palm: pose-conditioned avatar pipeline"};
    app.require_subcommand(1);

    std::string config_path, data_dir, run_dir, out_dir, pose_file, light_file, seq_file;
    std::string renderer = "lambert", split = "holdout", eval_renderer;
    int view = 0, inbetweens = 0, frames = 100, threads = 0;
    bool resume = false;

    auto* sd = app.add_subcommand("synth-data", "generate a synthetic multi-view dataset");
    sd->add_option("--config", config_path)->required();
    sd->add_option("--out", out_dir)->required();

    auto* init = app.add_subcommand("init", "first-frame initialization fit");
    init->add_option("--config", config_path)->required();
    init->add_option("--data", data_dir)->required();
    init->add_option("--run", run_dir)->required();

    auto* te = app.add_subcommand("train-embed", "train the feature embedding modules");
    te->add_option("--run", run_dir)->required();
    te->add_flag("--resume", resume);

    auto* tn = app.add_subcommand("train-neural", "train the neural renderer");
    tn->add_option("--run", run_dir)->required();
    tn->add_flag("--resume", resume);

    auto* rd = app.add_subcommand("render", "render one pose");
    rd->add_option("--run", run_dir)->required();
    rd->add_option("--pose-file", pose_file)->required();
    rd->add_option("--view", view);
    rd->add_option("--light-override", light_file);
    rd->add_option("--renderer", renderer)->check(CLI::IsMember({"lambert", "neural"}));
    rd->add_option("--out", out_dir);

    auto* an = app.add_subcommand("animate", "render a pose sequence");
    an->add_option("--run", run_dir)->required();
    an->add_option("--pose-seq", seq_file)->required();
    an->add_option("--inbetweens", inbetweens);
    an->add_option("--view", view);
    an->add_option("--renderer", renderer)->check(CLI::IsMember({"lambert", "neural"}));
    an->add_option("--out", out_dir);

    auto* ev = app.add_subcommand("eval", "evaluate against held-out frames");
    ev->add_option("--run", run_dir)->required();
    ev->add_option("--split", split)->check(CLI::IsMember({"holdout", "train"}));
    ev->add_option("--renderer", eval_renderer)->check(CLI::IsMember({"lambert", "neural"}));

    auto* be = app.add_subcommand("bench", "frame-rate benchmark of the frozen model");
    be->add_option("--run", run_dir)->required();
    be->add_option("--frames", frames);
    be->add_option("--threads", threads);

    app.add_option("--threads", threads, "worker thread count");

    try {
        app.parse(argc, argv);
        if (threads > 0) set_thread_count(threads);
        if (*sd) return cmd_synth_data(config_path, out_dir);
        if (*init) return cmd_init(config_path, data_dir, run_dir);
        if (*te) return cmd_train_embed(run_dir, resume);
        if (*tn) return cmd_train_neural(run_dir, resume);
        if (*rd) return cmd_render(run_dir, pose_file, view, light_file, renderer, out_dir);
        if (*an) return cmd_animate(run_dir, seq_file, inbetweens, view, renderer, out_dir);
        if (*ev) return cmd_eval(run_dir, split, eval_renderer);
        if (*be) return cmd_bench(run_dir, frames, threads);
        return 2;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "error: numerical: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
}
