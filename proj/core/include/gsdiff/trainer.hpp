#pragma once

#include "gsdiff/augmentation.hpp"
#include "gsdiff/dataset.hpp"
#include "gsdiff/losses.hpp"
#include "gsdiff/random.hpp"
#include "gsdiff/renderer.hpp"
#include "gsdiff/scaffold.hpp"

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace gsdiff {

class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class checkpoint_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LearningRates {
    // scaffold groups
    Real anchor_position = Real(1.6e-4); // exponentially decayed
    Real offsets = Real(1e-2);
    Real features = Real(2.5e-3);
    Real anchor_scaling = Real(5e-3);
    Real decoders = Real(2e-3);
    Real embeddings = Real(1e-3);
    // direct-model groups
    Real position = Real(1.6e-4); // decayed
    Real log_scale = Real(5e-3);
    Real rotation = Real(1e-3);
    Real opacity = Real(5e-2);
    Real sh = Real(2.5e-3);
};

struct DensifyConfig {
    int interval = 100;
    int start = 500;
    int end = 15000;
    Real grow_threshold = Real(2e-4);
    Real prune_threshold = Real(5e-3);
    Real voxel_size = 0; // 0: scene extent / 128
};

struct TrainConfig {
    int iterations = 2000;
    uint64_t seed = 0;
    std::string model = "scaffold"; // "scaffold" | "direct"
    int sh_degree = 2;              // direct model
    int feature_dim = 32;
    int offsets_per_anchor = 10;
    int appearance_dim = 16;
    int hidden_dim = 32;
    Real position_lr_final_ratio = Real(0.01);
    int checkpoint_interval = 0; // 0: final checkpoint only

    LearningRates lr;
    DensifyConfig densify;
    LossWeights loss;
    AugmentConfig augment;
    RenderConfig render;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Parameters and models

struct AdamParams {
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.999);
    Real eps = Real(1e-15);
};

/// One flat parameter tensor with its optimizer state. Row surgery keeps the
/// step counter (torch convention) and drops moments of removed rows.
struct ParamGroup {
    std::string name;
    std::vector<Real> value, grad, m, v;
    int64_t step = 0;
    Real lr = 0;
    bool decayed = false;

    void init(std::string group_name, size_t n, Real learning_rate, bool decay);
    void zero_grad();
    void adam_step(Real lr_scale, const AdamParams& params);
    void append_rows(std::span<const Real> rows);
    void keep_rows(const std::vector<uint8_t>& keep, size_t stride);
};

struct DirectModel {
    int count = 0;
    int sh_basis = 1; // (L+1)^2
    ParamGroup mu, log_scale, rotation, opacity, sh;

    std::array<ParamGroup*, 5> groups() { return {&mu, &log_scale, &rotation, &opacity, &sh}; }
    std::array<const ParamGroup*, 5> groups() const {
        return {&mu, &log_scale, &rotation, &opacity, &sh};
    }
    std::vector<Gaussian3D> to_gaussians() const;
    static DirectModel from_gaussians(std::span<const Gaussian3D> gaussians,
                                      const LearningRates& lr);
    void renormalize_rotations();
};

struct ScaffoldModel {
    int anchor_count = 0;
    int feature_dim = 32, k = 10, appearance_dim = 16, hidden = 32;
    int n_images = 0;
    ParamGroup positions, features, offsets, scalings, decoders, embeddings;

    std::array<ParamGroup*, 6> groups() {
        return {&positions, &features, &offsets, &scalings, &decoders, &embeddings};
    }
    std::array<const ParamGroup*, 6> groups() const {
        return {&positions, &features, &offsets, &scalings, &decoders, &embeddings};
    }
    std::vector<Anchor> anchors() const;
    DecoderBank bank() const;
    static ScaffoldModel assemble(std::span<const Anchor> anchors, const DecoderBank& bank,
                                  const LearningRates& lr);
};

struct ModelState {
    std::string type; // "direct" | "scaffold"
    DirectModel direct;
    ScaffoldModel scaffold;
};

/// Voxel-downsamples SfM points into anchors and seeds the decoder bank.
struct ScaffoldInit {
    std::vector<Anchor> anchors;
    DecoderBank bank;
};
ScaffoldInit init_from_points(const PointCloud& points, Real voxel_size, int feature_dim,
                              int k, int appearance_dim, int hidden, int n_images,
                              Rng& rng);

/// Direct-model seed: one gaussian per point, color in the SH DC band, scale
/// from the nearest-neighbor distance.
std::vector<Gaussian3D> init_direct_from_points(const PointCloud& points, int sh_degree);

RenderOutput render_model(const ModelState& model, const CameraIntrinsics& intrinsics,
                          const Pose& pose, const RenderConfig& cfg,
                          int appearance_id = 0);

// ---------------------------------------------------------------------------

struct LossBreakdown {
    int iteration = 0;
    Real total = 0;
    Real photometric = 0;
    Real depth = 0;
    Real augmentation = 0;
    Real regularization = 0;
    bool augmented = false; // the gated term ran this iteration
    int aug_active = 0;
    int aug_dropped = 0;
    int visible_gaussians = 0;
    int anchor_count = 0;
};

class Trainer {
public:
    Trainer(TrainConfig cfg, SceneDataset dataset);

    /// One optimization step on the given view (advances the iteration
    /// counter, applies the augmentation/densify schedules).
    LossBreakdown train_step(const View& view);
    /// One step on the next view of the seeded permutation.
    LossBreakdown step();
    void run(const std::function<void(const LossBreakdown&)>& on_step = {});

    RenderOutput render(const CameraIntrinsics& intrinsics, const Pose& pose,
                        int appearance_id = 0) const;

    void save_checkpoint(const std::string& path) const;
    static Trainer resume_checkpoint(const std::string& path, TrainConfig cfg,
                                     SceneDataset dataset);

    void set_oracle(std::unique_ptr<ViewOracle> oracle) { oracle_ = std::move(oracle); }
    void set_metric(std::unique_ptr<PerceptualMetric> metric) { metric_ = std::move(metric); }

    int iteration() const { return iteration_; }
    const TrainConfig& config() const { return cfg_; }
    const SceneDataset& dataset() const { return data_; }
    const ModelState& model() const { return model_; }
    /// All parameter values concatenated in a fixed order (equality checks).
    std::vector<Real> parameters_flat() const;

private:
    Trainer() = default;
    friend struct CheckpointCodec;

    const View& pick_view();
    void apply_optimizer();
    void densify_and_prune();
    void check_finite(const LossBreakdown& breakdown) const;
    Real resolved_voxel_size() const;

    TrainConfig cfg_;
    SceneDataset data_;
    ModelState model_;
    AnchorStats stats_;
    Rng rng_main_, rng_oracle_, rng_densify_;
    std::vector<uint32_t> permutation_;
    uint64_t perm_pos_ = 0;
    int iteration_ = 0;
    std::unique_ptr<ViewOracle> oracle_;
    std::unique_ptr<PerceptualMetric> metric_;
    AdamParams adam_;
};

/// Reads only the model payload of a checkpoint (render/eval tooling).
struct CheckpointModel {
    ModelState model;
    int iteration = 0;
};
CheckpointModel load_checkpoint_model(const std::string& path);

} // namespace gsdiff
