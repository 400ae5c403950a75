#include "gsdiff/augmentation.hpp"

#include "gsdiff/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "gsdiff/image_io.hpp"

namespace gsdiff {

void AugmentConfig::validate() const {
    require(every_n >= 1, "augmentation: every_n must be >= 1");
    require(pairs >= 1, "augmentation: pairs must be >= 1");
    require(views_per_pair >= 1, "augmentation: views_per_pair must be >= 1");
    require(noise_level >= 0 && noise_level <= 1,
            "augmentation: noise_level must be in [0,1]");
    require(epsilon > 0, "augmentation: epsilon must be positive");
}

// ---------------------------------------------------------------------------
// Oracles

std::vector<std::optional<Image>> IdentityOracle::generate(const Request& request,
                                                           Rng&) {
    std::vector<std::optional<Image>> out;
    out.reserve(request.rendered.size());
    for (const Image& img : request.rendered) out.emplace_back(img);
    return out;
}

GroundTruthOracle::GroundTruthOracle(std::vector<Gaussian3D> scene,
                                     RenderConfig render_cfg)
    : scene_(std::move(scene)), render_cfg_(render_cfg) {}

std::vector<std::optional<Image>> GroundTruthOracle::generate(const Request& request,
                                                              Rng& rng) {
    std::vector<std::optional<Image>> out;
    out.reserve(request.target_poses.size());
    const Real sigma = Real(0.1) * request.noise_level;
    for (const Pose& pose : request.target_poses) {
        const PreparedGaussians batch = prepare_direct(scene_, pose);
        const PipelineState state =
            render_gaussians(batch, request.intrinsics, pose, render_cfg_);
        Image img = image_from_render(state.raster.out);
        if (sigma > Real(0))
            for (Real& v : img.data)
                v = std::clamp(v + sigma * rng.normal(), Real(0), Real(1));
        out.emplace_back(std::move(img));
    }
    return out;
}

FileOracle::FileOracle(std::string root) : root_(std::move(root)) {}

std::vector<std::optional<Image>> FileOracle::generate(const Request& request, Rng&) {
    std::vector<std::optional<Image>> out;
    out.reserve(request.target_poses.size());
    for (const Pose& pose : request.target_poses) {
        const std::filesystem::path path =
            std::filesystem::path(root_) / "aug" / (pose_hash_hex(pose) + ".png");
        if (!std::filesystem::exists(path)) {
            out.emplace_back(std::nullopt);
            continue;
        }
        out.emplace_back(read_png(path.string()));
    }
    return out;
}

uint64_t pose_hash(const Pose& pose) {
    const double values[7] = {
        double(pose.rotation.w()), double(pose.rotation.x()),
        double(pose.rotation.y()), double(pose.rotation.z()),
        double(pose.translation.x()), double(pose.translation.y()),
        double(pose.translation.z())};
    uint64_t h = 14695981039346656037ull;
    for (double v : values) {
        double rounded = std::round(v * 1e6) / 1e6;
        if (rounded == 0.0) rounded = 0.0; // collapse -0.0 to +0.0
        unsigned char bytes[8];
        std::memcpy(bytes, &rounded, 8); // little-endian host
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 1099511628211ull;
        }
    }
    return h;
}

std::string pose_hash_hex(const Pose& pose) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(pose_hash(pose)));
    return buf;
}

// ---------------------------------------------------------------------------

std::vector<AugmentedCamera> build_augmented_cameras(
    std::span<const View> views, std::span<const std::pair<int, int>> pairs,
    int views_per_pair) {
    require(views_per_pair >= 1, "build_augmented_cameras: views_per_pair must be >= 1");
    std::vector<AugmentedCamera> out;
    out.reserve(pairs.size() * static_cast<size_t>(views_per_pair));
    for (const auto& [i, j] : pairs) {
        const Pose keyframes[2] = {views[i].pose, views[j].pose};
        for (int s = 1; s <= views_per_pair; ++s) {
            AugmentedCamera cam;
            cam.pose = interpolate_pose_spline(keyframes,
                                               Real(s) / Real(views_per_pair + 1));
            cam.intrinsics = views[i].intrinsics;
            cam.ref_view = i;
            out.push_back(std::move(cam));
        }
    }
    return out;
}

AugmentationResult augmentation_step(std::span<const View> train_views,
                                     const RenderImageFn& render, ViewOracle& oracle,
                                     const PerceptualMetric& metric,
                                     const AugmentConfig& cfg, Rng& oracle_rng) {
    AugmentationResult res;
    const auto pairs = select_proximal_pairs(train_views, cfg.pairs);
    res.cameras = build_augmented_cameras(train_views, pairs, cfg.views_per_pair);

    std::vector<Image> renders;
    std::vector<Pose> poses;
    renders.reserve(res.cameras.size());
    for (const AugmentedCamera& cam : res.cameras) {
        renders.push_back(render(cam));
        poses.push_back(cam.pose);
    }

    ViewOracle::Request request;
    request.references = train_views;
    request.target_poses = poses;
    request.intrinsics = res.cameras.empty() ? CameraIntrinsics{} : res.cameras[0].intrinsics;
    request.rendered = renders;
    request.noise_level = cfg.noise_level;
    const auto generated = oracle.generate(request, oracle_rng);
    require(generated.size() == res.cameras.size(),
            "augmentation: oracle returned wrong target count");

    Real loss_sum = 0;
    for (size_t t = 0; t < res.cameras.size(); ++t) {
        if (!generated[t]) {
            std::fprintf(stderr,
                         "warning: oracle '%s' failed for augmented target %zu; "
                         "target dropped\n",
                         oracle.name().c_str(), t);
            ++res.dropped;
            continue;
        }
        require(generated[t]->same_shape(renders[t]),
                "augmentation: oracle output shape mismatch");

        AugmentedView view;
        view.pose = res.cameras[t].pose;
        view.intrinsics = res.cameras[t].intrinsics;
        view.rendered = renders[t];
        view.generated = *generated[t];
        view.target_index = static_cast<int>(t);

        GatedLoss gate = diffusion_loss(view.rendered, view.generated, metric, cfg.epsilon);
        view.gate_distance = gate.distance;
        view.active = gate.active;
        if (gate.active) {
            ++res.active_count;
            loss_sum += gate.value;
        }
        res.views.push_back(std::move(view));
        res.dloss_drendered.push_back(std::move(gate.grad));
    }

    if (res.active_count > 0) {
        res.loss = loss_sum / Real(res.active_count);
        const Real scale = Real(1) / Real(res.active_count);
        for (size_t v = 0; v < res.views.size(); ++v) {
            if (!res.views[v].active) {
                std::fill(res.dloss_drendered[v].data.begin(),
                          res.dloss_drendered[v].data.end(), Real(0));
                continue;
            }
            for (Real& g : res.dloss_drendered[v].data) g *= scale;
        }
    } else {
        for (Image& g : res.dloss_drendered)
            std::fill(g.data.begin(), g.data.end(), Real(0));
    }
    return res;
}

} // namespace gsdiff
