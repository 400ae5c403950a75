#include "gsdiff/synthetic.hpp"

#include "gsdiff/random.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace gsdiff {

std::vector<Gaussian3D> make_synthetic_scene(const SyntheticSceneConfig& cfg) {
    Rng rng(cfg.seed);
    std::vector<Gaussian3D> scene(cfg.gaussians);
    const int basis = sh_coeff_count(cfg.sh_degree);
    for (Gaussian3D& g : scene) {
        g.mu = Vec3(rng.uniform(-cfg.extent, cfg.extent),
                    rng.uniform(-cfg.extent, cfg.extent),
                    rng.uniform(-cfg.extent, cfg.extent));
        const Real s = cfg.extent * rng.uniform(Real(0.04), Real(0.12));
        g.log_scale = Vec3(std::log(s * rng.uniform(Real(0.7), Real(1.4))),
                           std::log(s * rng.uniform(Real(0.7), Real(1.4))),
                           std::log(s * rng.uniform(Real(0.7), Real(1.4))));
        Quat q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        g.rotation = q.normalized();
        const Real alpha = rng.uniform(Real(0.5), Real(0.95));
        g.opacity_logit = std::log(alpha / (Real(1) - alpha));
        g.sh.assign(basis, Vec3::Zero());
        const Vec3 color(rng.uniform(Real(0.15), Real(0.85)),
                         rng.uniform(Real(0.15), Real(0.85)),
                         rng.uniform(Real(0.15), Real(0.85)));
        g.sh[0] = (color - Vec3::Constant(Real(0.5))) / Real(0.28209479177387814);
        for (int b = 1; b < basis; ++b)
            g.sh[b] = Vec3(rng.uniform(Real(-0.08), Real(0.08)),
                           rng.uniform(Real(-0.08), Real(0.08)),
                           rng.uniform(Real(-0.08), Real(0.08)));
    }
    return scene;
}

std::vector<std::pair<CameraIntrinsics, Pose>> make_orbit_cameras(const OrbitConfig& cfg) {
    std::vector<std::pair<CameraIntrinsics, Pose>> out;
    out.reserve(cfg.views);
    for (int i = 0; i < cfg.views; ++i) {
        const Real az = Real(2) * Real(M_PI) * Real(i) / Real(cfg.views);
        const Vec3 center(cfg.radius * std::cos(az) * std::cos(cfg.elevation),
                          cfg.radius * std::sin(cfg.elevation),
                          cfg.radius * std::sin(az) * std::cos(cfg.elevation));
        const Vec3 forward = (-center).normalized();
        Vec3 right = forward.cross(Vec3(0, 1, 0));
        if (right.norm() < Real(1e-6)) right = Vec3(1, 0, 0);
        right.normalize();
        const Vec3 down = forward.cross(right).normalized();

        Mat3 rot;
        rot.row(0) = right.transpose();
        rot.row(1) = down.transpose();
        rot.row(2) = forward.transpose();

        Pose pose;
        pose.rotation = Quat(rot).normalized();
        pose.translation = -(pose.rotation * center);

        CameraIntrinsics intr;
        intr.fx = intr.fy = cfg.focal;
        intr.cx = Real(cfg.width) / 2;
        intr.cy = Real(cfg.height) / 2;
        intr.width = cfg.width;
        intr.height = cfg.height;
        out.emplace_back(intr, pose);
    }
    return out;
}

SyntheticDataset make_synthetic_dataset(const SyntheticDatasetConfig& cfg) {
    SyntheticDataset out;
    out.scene = make_synthetic_scene(cfg.scene);
    const auto cameras = make_orbit_cameras(cfg.orbit);

    int index = 0;
    for (const auto& [intr, pose] : cameras) {
        const PreparedGaussians batch = prepare_direct(out.scene, pose);
        const PipelineState state = render_gaussians(batch, intr, pose, cfg.render);

        View view;
        view.intrinsics = intr;
        view.pose = pose;
        view.appearance_id = index;
        char name[32];
        std::snprintf(name, sizeof(name), "view_%04d", index);
        view.name = name;

        view.image = image_from_render(state.raster.out);
        for (Real& v : view.image.data) {
            // 8-bit grid so the dataset round-trips losslessly through PNG
            v = Real(std::lround(double(std::clamp(v, Real(0), Real(1))) * 255.0)) /
                Real(255);
        }

        if (cfg.with_depth) {
            Image depth = depth_from_render(state.raster.out);
            Real far = 0;
            for (Real v : depth.data) far = std::max(far, v);
            if (far <= 0) far = Real(1);
            for (size_t p = 0; p < depth.data.size(); ++p) {
                if (state.raster.out.contrib_count[p] == 0) depth.data[p] = far;
                // float32 grid for lossless PFM round-trips
                depth.data[p] = Real(static_cast<float>(depth.data[p]));
            }
            view.mono_depth = std::move(depth);
        }
        if (cfg.with_masks)
            view.mask = Image(intr.width, intr.height, 1, Real(1));

        out.dataset.views.push_back(std::move(view));
        ++index;
    }

    for (const Gaussian3D& g : out.scene) {
        out.dataset.points.positions.push_back(g.mu);
        Vec3 color = Vec3::Constant(Real(0.5)) + Real(0.28209479177387814) * g.sh[0];
        color = color.cwiseMax(Real(0)).cwiseMin(Real(1));
        for (int c = 0; c < 3; ++c)
            color[c] = Real(std::lround(double(color[c]) * 255.0)) / Real(255);
        out.dataset.points.colors.push_back(color);
    }
    out.dataset.scene_scale = camera_bbox_diagonal(out.dataset.views);
    return out;
}

// ---------------------------------------------------------------------------

void save_scene_gaussians(const std::string& path, std::span<const Gaussian3D> scene) {
    nlohmann::json j;
    j["count"] = scene.size();
    nlohmann::json list = nlohmann::json::array();
    for (const Gaussian3D& g : scene) {
        nlohmann::json e;
        e["mu"] = {double(g.mu.x()), double(g.mu.y()), double(g.mu.z())};
        e["log_scale"] = {double(g.log_scale.x()), double(g.log_scale.y()),
                          double(g.log_scale.z())};
        e["rotation"] = {double(g.rotation.w()), double(g.rotation.x()),
                         double(g.rotation.y()), double(g.rotation.z())};
        e["opacity_logit"] = double(g.opacity_logit);
        std::vector<double> sh;
        for (const Vec3& c : g.sh)
            for (int ch = 0; ch < 3; ++ch) sh.push_back(double(c[ch]));
        e["sh"] = sh;
        list.push_back(std::move(e));
    }
    j["gaussians"] = std::move(list);
    std::ofstream outf(path);
    if (!outf) throw std::runtime_error("scene: cannot write " + path);
    outf << j.dump();
}

std::vector<Gaussian3D> load_scene_gaussians(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("scene: cannot open " + path);
    nlohmann::json j;
    in >> j;
    std::vector<Gaussian3D> scene;
    for (const auto& e : j.at("gaussians")) {
        Gaussian3D g;
        const auto mu = e.at("mu").get<std::vector<double>>();
        const auto ls = e.at("log_scale").get<std::vector<double>>();
        const auto rot = e.at("rotation").get<std::vector<double>>();
        g.mu = Vec3(Real(mu[0]), Real(mu[1]), Real(mu[2]));
        g.log_scale = Vec3(Real(ls[0]), Real(ls[1]), Real(ls[2]));
        g.rotation = Quat(Real(rot[0]), Real(rot[1]), Real(rot[2]), Real(rot[3]));
        g.opacity_logit = Real(e.at("opacity_logit").get<double>());
        const auto sh = e.at("sh").get<std::vector<double>>();
        require(sh.size() % 3 == 0, "scene: malformed sh block");
        g.sh.resize(sh.size() / 3);
        for (size_t b = 0; b < g.sh.size(); ++b)
            g.sh[b] = Vec3(Real(sh[3 * b]), Real(sh[3 * b + 1]), Real(sh[3 * b + 2]));
        scene.push_back(std::move(g));
    }
    return scene;
}

} // namespace gsdiff
