#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gsdiff/augmentation.hpp"
#include "gsdiff/config_json.hpp"
#include "gsdiff/dataset.hpp"
#include "gsdiff/image_io.hpp"
#include "gsdiff/metrics.hpp"
#include "gsdiff/synthetic.hpp"
#include "gsdiff/trainer.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace gsdiff;

namespace {

std::unique_ptr<ViewOracle> make_oracle(const std::string& spec, const std::string& data_dir,
                                        const RenderConfig& render_cfg) {
    if (spec == "identity") return std::make_unique<IdentityOracle>();
    if (spec == "gt") {
        const fs::path scene_path = fs::path(data_dir) / "scene_gaussians.json";
        if (!fs::exists(scene_path))
            throw std::runtime_error(
                "gt oracle needs " + scene_path.string() +
                " (synthetic datasets written by `gsdiff synth` include it)");
        return std::make_unique<GroundTruthOracle>(
            load_scene_gaussians(scene_path.string()), render_cfg);
    }
    if (spec.rfind("file:", 0) == 0)
        return std::make_unique<FileOracle>(spec.substr(5));
    throw std::runtime_error("unknown oracle '" + spec + "' (identity | gt | file:PATH)");
}

std::string breakdown_json(const LossBreakdown& bd) {
    nlohmann::json j;
    j["iteration"] = bd.iteration;
    j["total"] = double(bd.total);
    j["photometric"] = double(bd.photometric);
    j["depth"] = double(bd.depth);
    j["augmentation"] = double(bd.augmentation);
    j["regularization"] = double(bd.regularization);
    j["augmented"] = bd.augmented;
    j["aug_active"] = bd.aug_active;
    j["visible_gaussians"] = bd.visible_gaussians;
    j["anchors"] = bd.anchor_count;
    return j.dump();
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_dir, const std::string& resume_path) {
    TrainConfig cfg =
        config_path.empty() ? TrainConfig{} : load_train_config(config_path);
    SceneDataset dataset = load_dataset(data_dir);

    fs::create_directories(out_dir);
    std::ofstream log(fs::path(out_dir) / "metrics.jsonl",
                      resume_path.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("cannot write metrics log in " + out_dir);

    Trainer trainer =
        resume_path.empty()
            ? Trainer(cfg, std::move(dataset))
            : Trainer::resume_checkpoint(resume_path, cfg, std::move(dataset));
    if (cfg.augment.enabled)
        trainer.set_oracle(make_oracle(cfg.augment.oracle, data_dir, cfg.render));

    trainer.run([&](const LossBreakdown& bd) {
        log << breakdown_json(bd) << "\n";
        if (cfg.checkpoint_interval > 0 && bd.iteration % cfg.checkpoint_interval == 0) {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint_%06d.gsdf", bd.iteration);
            trainer.save_checkpoint((fs::path(out_dir) / name).string());
        }
    });
    trainer.save_checkpoint((fs::path(out_dir) / "checkpoint_final.gsdf").string());
    log.flush();
    std::cout << "trained " << trainer.iteration() << " iterations -> " << out_dir
              << std::endl;
    return 0;
}

std::vector<std::pair<CameraIntrinsics, Pose>> read_pose_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open pose file " + path);
    std::vector<std::pair<CameraIntrinsics, Pose>> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string name;
        double fx, fy, cx, cy, qw, qx, qy, qz, tx, ty, tz;
        int w, h;
        if (!(ss >> name >> fx >> fy >> cx >> cy >> w >> h >> qw >> qx >> qy >> qz >>
              tx >> ty >> tz))
            throw std::runtime_error("pose file: malformed line " +
                                     std::to_string(line_no));
        CameraIntrinsics intr{Real(fx), Real(fy), Real(cx), Real(cy), w, h};
        Pose pose;
        pose.rotation = Quat(Real(qw), Real(qx), Real(qy), Real(qz)).normalized();
        pose.translation = Vec3(Real(tx), Real(ty), Real(tz));
        out.emplace_back(intr, pose);
    }
    if (out.empty()) throw std::runtime_error("pose file holds no poses");
    return out;
}

int cmd_render(const std::string& ckpt, const std::string& poses_path,
               const std::string& out_dir, int frames) {
    const CheckpointModel model = load_checkpoint_model(ckpt);
    const auto keyposes = read_pose_file(poses_path);
    fs::create_directories(out_dir);

    RenderConfig render_cfg;
    const int n = static_cast<int>(keyposes.size());
    const int total = frames > 0 ? frames : n;

    std::vector<Pose> pose_list(keyposes.size());
    for (size_t i = 0; i < keyposes.size(); ++i) pose_list[i] = keyposes[i].second;

    for (int f = 0; f < total; ++f) {
        Pose pose;
        if (n == 1 || total == 1) {
            pose = keyposes[0].second;
        } else if (total == n) {
            pose = keyposes[f].second;
        } else {
            const Real t = Real(f) * Real(n - 1) / Real(total - 1);
            pose = interpolate_pose_spline(pose_list, t);
        }
        const RenderOutput out =
            render_model(model.model, keyposes[0].first, pose, render_cfg);
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.png", f);
        write_png((fs::path(out_dir) / name).string(), image_from_render(out));
    }
    std::cout << "wrote " << total << " frames -> " << out_dir << std::endl;
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir) {
    const CheckpointModel model = load_checkpoint_model(ckpt);
    const SceneDataset dataset = load_dataset(data_dir);
    RenderConfig render_cfg;

    nlohmann::json views = nlohmann::json::array();
    double psnr_sum = 0, ssim_sum = 0;
    for (const View& view : dataset.views) {
        const RenderOutput out = render_model(model.model, view.intrinsics, view.pose,
                                              render_cfg, view.appearance_id);
        const Image img = image_from_render(out);
        const Real p = psnr(img, view.image);
        const Real s = ssim(img, view.image);
        psnr_sum += double(p);
        ssim_sum += double(s);
        views.push_back({{"name", view.name}, {"psnr", double(p)}, {"ssim", double(s)}});
    }
    nlohmann::json j;
    j["views"] = std::move(views);
    j["mean_psnr"] = psnr_sum / double(dataset.views.size());
    j["mean_ssim"] = ssim_sum / double(dataset.views.size());
    std::cout << j.dump(2) << std::endl;
    return 0;
}

int cmd_augment_preview(const std::string& ckpt, const std::string& data_dir,
                        const std::string& oracle_spec, const std::string& out_dir,
                        Real noise_level) {
    const CheckpointModel model = load_checkpoint_model(ckpt);
    const SceneDataset dataset = load_dataset(data_dir);
    fs::create_directories(out_dir);

    RenderConfig render_cfg;
    AugmentConfig aug_cfg;
    aug_cfg.enabled = true;
    aug_cfg.noise_level = noise_level;
    auto oracle = make_oracle(oracle_spec, data_dir, render_cfg);
    MsSsimDistance metric;
    Rng rng(1234);

    const RenderImageFn render_fn = [&](const AugmentedCamera& cam) {
        return image_from_render(
            render_model(model.model, cam.intrinsics, cam.pose, render_cfg,
                         dataset.views[cam.ref_view].appearance_id));
    };
    const AugmentationResult res = augmentation_step(dataset.views, render_fn, *oracle,
                                                     metric, aug_cfg, rng);

    std::ofstream gates(fs::path(out_dir) / "gates.jsonl");
    for (const AugmentedView& v : res.views) {
        // side-by-side render | generated
        Image pair(v.rendered.width * 2, v.rendered.height, 3);
        for (int r = 0; r < v.rendered.height; ++r)
            for (int c = 0; c < v.rendered.width; ++c)
                for (int ch = 0; ch < 3; ++ch) {
                    pair.at(r, c, ch) = v.rendered.at(r, c, ch);
                    pair.at(r, c + v.rendered.width, ch) = v.generated.at(r, c, ch);
                }
        char name[64];
        std::snprintf(name, sizeof(name), "pair_%03d_%s.png", v.target_index,
                      pose_hash_hex(v.pose).c_str());
        write_png((fs::path(out_dir) / name).string(), pair);

        nlohmann::json j;
        j["target"] = v.target_index;
        j["pose_hash"] = pose_hash_hex(v.pose);
        j["distance"] = double(v.gate_distance);
        j["active"] = v.active;
        gates << j.dump() << "\n";
    }
    std::cout << "previewed " << res.views.size() << " targets (" << res.active_count
              << " active, " << res.dropped << " dropped) -> " << out_dir << std::endl;
    return 0;
}

int cmd_synth(const std::string& out_dir, uint64_t seed, int gaussians, int views,
              int size) {
    SyntheticDatasetConfig cfg;
    cfg.scene.seed = seed;
    cfg.scene.gaussians = gaussians;
    cfg.orbit.views = views;
    cfg.orbit.width = cfg.orbit.height = size;
    const SyntheticDataset synth = make_synthetic_dataset(cfg);
    save_dataset(out_dir, synth.dataset);
    save_scene_gaussians((fs::path(out_dir) / "scene_gaussians.json").string(),
                         synth.scene);
    std::cout << "wrote synthetic dataset (" << synth.dataset.views.size() << " views, "
              << synth.scene.size() << " gaussians) -> " << out_dir << std::endl;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gsdiff: anchor-based gaussian splatting trainer with "
                 "generative pseudo-view augmentation"};
    app.require_subcommand(1);

    std::string data_dir, config_path, out_dir, ckpt, poses_path, oracle_spec, resume;
    int frames = 0, gaussians = 60, views = 8, size = 64;
    uint64_t seed = 7;
    double noise_level = 0.5;

    auto* train = app.add_subcommand("train", "optimize a model on a dataset");
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--config", config_path, "JSON config file");
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--resume", resume, "checkpoint to resume from");

    auto* render = app.add_subcommand("render", "render frames along a pose spline");
    render->add_option("--ckpt", ckpt, "checkpoint file")->required();
    render->add_option("--poses", poses_path, "keyframe pose file (cameras.txt format)")
        ->required();
    render->add_option("--out", out_dir, "output directory")->required();
    render->add_option("--frames", frames, "frame count (default: one per keyframe)");

    auto* eval = app.add_subcommand("eval", "PSNR/SSIM against a dataset");
    eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
    eval->add_option("--data", data_dir, "dataset directory")->required();

    auto* preview = app.add_subcommand("augment-preview",
                                       "run one augmentation round and dump pairs");
    preview->add_option("--ckpt", ckpt, "checkpoint file")->required();
    preview->add_option("--data", data_dir, "dataset directory")->required();
    preview->add_option("--oracle", oracle_spec, "identity | gt | file:PATH")
        ->default_val("identity");
    preview->add_option("--out", out_dir, "output directory")->required();
    preview->add_option("--noise", noise_level, "oracle noise level");

    auto* synth = app.add_subcommand("synth", "write a synthetic gaussian dataset");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--seed", seed, "scene seed");
    synth->add_option("--gaussians", gaussians, "gaussian count");
    synth->add_option("--views", views, "view count");
    synth->add_option("--size", size, "image side length");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(data_dir, config_path, out_dir, resume);
        if (render->parsed()) return cmd_render(ckpt, poses_path, out_dir, frames);
        if (eval->parsed()) return cmd_eval(ckpt, data_dir);
        if (preview->parsed())
            return cmd_augment_preview(ckpt, data_dir, oracle_spec, out_dir,
                                       Real(noise_level));
        if (synth->parsed()) return cmd_synth(out_dir, seed, gaussians, views, size);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
