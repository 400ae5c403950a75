#pragma once

#include "gsdiff/losses.hpp"
#include "gsdiff/primitives.hpp"
#include "gsdiff/random.hpp"
#include "gsdiff/renderer.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gsdiff {

struct AugmentConfig {
    bool enabled = false;
    int every_n = 3;        // augmentation runs when iteration % every_n == 0
    int pairs = 4;          // proximal pairs per round
    int views_per_pair = 2; // spline samples per pair
    Real noise_level = Real(0.5);
    Real epsilon = Real(0.5);
    std::string oracle = "identity"; // identity | gt | file:PATH (CLI wiring)

    void validate() const;
};

/// Pseudo-observation produced by the oracle for one augmented camera.
struct AugmentedView {
    Pose pose;
    CameraIntrinsics intrinsics;
    Image generated;
    Image rendered;
    Real gate_distance = 0;
    bool active = false; // gate_distance <= epsilon
    int target_index = 0;
};

/// Contract of the generative-view stand-in: given reference views, target
/// poses and the current renders at those poses, produce one image per target
/// (in [0,1], target-sized). nullopt marks a per-target failure; the target
/// is dropped. Implementations must be deterministic given the rng state.
class ViewOracle {
public:
    struct Request {
        std::span<const View> references;
        std::span<const Pose> target_poses;
        CameraIntrinsics intrinsics;
        std::span<const Image> rendered;
        Real noise_level = 0;
    };

    virtual ~ViewOracle() = default;
    virtual std::vector<std::optional<Image>> generate(const Request& request,
                                                       Rng& rng) = 0;
    virtual std::string name() const = 0;
};

/// Returns the rendered inputs unchanged.
class IdentityOracle final : public ViewOracle {
public:
    std::vector<std::optional<Image>> generate(const Request& request, Rng& rng) override;
    std::string name() const override { return "identity"; }
};

/// Renders a reference gaussian scene at the target poses, optionally
/// perturbed by seeded pixel noise of standard deviation 0.1 * noise_level.
class GroundTruthOracle final : public ViewOracle {
public:
    GroundTruthOracle(std::vector<Gaussian3D> scene, RenderConfig render_cfg);
    std::vector<std::optional<Image>> generate(const Request& request, Rng& rng) override;
    std::string name() const override { return "ground-truth"; }

private:
    std::vector<Gaussian3D> scene_;
    RenderConfig render_cfg_;
};

/// Reads precomputed images from <root>/aug/<pose-hash>.png; a missing file
/// is a per-target failure.
class FileOracle final : public ViewOracle {
public:
    explicit FileOracle(std::string root);
    std::vector<std::optional<Image>> generate(const Request& request, Rng& rng) override;
    std::string name() const override { return "file"; }

private:
    std::string root_;
};

/// 64-bit FNV-1a over the pose serialized as 7 little-endian doubles
/// (qw qx qy qz tx ty tz), each rounded to 1e-6.
uint64_t pose_hash(const Pose& pose);
std::string pose_hash_hex(const Pose& pose);

// ---------------------------------------------------------------------------

struct AugmentedCamera {
    Pose pose;
    CameraIntrinsics intrinsics;
    int ref_view = 0; // first view of the originating pair
};

/// For each pair, views_per_pair poses at uniformly spaced interior spline
/// parameters; intrinsics copied from the first view of the pair.
std::vector<AugmentedCamera> build_augmented_cameras(
    std::span<const View> views, std::span<const std::pair<int, int>> pairs,
    int views_per_pair);

struct AugmentationResult {
    std::vector<AugmentedView> views;
    Real loss = 0;                       // mean over active views, 0 if none
    std::vector<Image> dloss_drendered;  // parallel to views; zero when inactive
    int active_count = 0;
    int dropped = 0;
    std::vector<AugmentedCamera> cameras; // all targets, pre-drop
};

using RenderImageFn = std::function<Image(const AugmentedCamera&)>;

/// One augmentation round: proximal pair selection, spline cameras, renders
/// through the supplied callback (called exactly once per target, in target
/// order), oracle invocation and the gated perceptual loss. Gradients flow
/// only through the rendered images.
AugmentationResult augmentation_step(std::span<const View> train_views,
                                     const RenderImageFn& render, ViewOracle& oracle,
                                     const PerceptualMetric& metric,
                                     const AugmentConfig& cfg, Rng& oracle_rng);

} // namespace gsdiff
