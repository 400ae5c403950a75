#pragma once

#include "gsdiff/random.hpp"
#include "gsdiff/renderer.hpp"
#include "gsdiff/types.hpp"

#include <span>
#include <utility>
#include <vector>

namespace gsdiff {

/// Scene anchor spawning k neural gaussians. The per-axis scaling is stored
/// as log so it stays positive under unconstrained updates.
struct Anchor {
    Vec3 x_v = Vec3::Zero();
    VecX feature;               // F
    std::vector<Vec3> offsets;  // k learnable offsets
    Vec3 log_lv = Vec3::Zero(); // l_v = exp(log_lv)
};

/// Two-hidden-layer ReLU MLP with explicit forward/backward.
struct Mlp {
    Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic> w1, w2, w3;
    VecX b1, b2, b3;

    int in_dim() const { return static_cast<int>(w1.cols()); }
    int out_dim() const { return static_cast<int>(w3.rows()); }

    /// relu_margin, when given, is lowered to the smallest |pre-activation|
    /// seen (distance to the ReLU kink).
    VecX forward(const VecX& z, VecX* h1_out = nullptr, VecX* h2_out = nullptr,
                 Real* relu_margin = nullptr) const;
    /// Accumulates weight gradients into `grad` (same shapes); returns dz.
    VecX backward(const VecX& z, const VecX& h1, const VecX& h2, const VecX& dout,
                  Mlp& grad) const;

    static Mlp create(int in, int hidden, int out);          // zero weights
    static Mlp init(int in, int hidden, int out, Rng& rng);  // uniform fan-in
    void set_zero();

    size_t param_count() const;
    void to_flat(std::span<Real> out) const;
    void from_flat(std::span<const Real> in);
    void add_to_flat(std::span<Real> out) const; // accumulate gradients
};

/// The three decode heads plus the per-image appearance table. Head inputs
/// are [feature, viewing distance, view direction]; the color head also takes
/// the appearance embedding.
struct DecoderBank {
    int feature_dim = 32;
    int k = 10;
    int appearance_dim = 16;
    int hidden = 32;
    Mlp opacity_head;   // F+4 -> k, tanh
    Mlp scale_rot_head; // F+4 -> 7k (3 log-scale offsets + 4 raw quaternion)
    Mlp color_head;     // F+4+E -> 3k, sigmoid
    std::vector<VecX> appearance_table;

    static DecoderBank init(int feature_dim, int k, int appearance_dim, int hidden,
                            int n_images, Rng& rng);
    int head_in_dim() const { return feature_dim + 4; }
};

/// Per-slot decode result for a single anchor.
struct NeuralGaussian {
    Vec3 mu;
    Vec3 log_scale;
    Quat rotation;
    Real opacity = 0; // tanh output; visible iff > 0
    Vec3 rgb = Vec3::Zero();
    bool visible = false;
};

std::vector<NeuralGaussian> decode_neural_gaussians(const Anchor& anchor,
                                                    const DecoderBank& decoders,
                                                    const Vec3& camera_center,
                                                    int appearance_id);

/// Batch decode producing the render-ready gaussians (visible slots only)
/// plus the caches the backward pass needs.
struct DecodedAnchors {
    PreparedGaussians batch;
    std::vector<std::pair<int, int>> origin; // batch entry -> (anchor, slot)
    std::vector<Real> anchor_mean_opacity;   // per anchor, mean of max(o, 0)

    struct Cache {
        VecX z;                  // head input (F+4)
        VecX h1o, h2o, opa_out;  // opacity head
        VecX h1s, h2s, sr_out;   // scale/rot head
        VecX zc, h1c, h2c, col_out;
        Real dist = 0;
        Vec3 dir = Vec3::Zero();
    };
    std::vector<Cache> cache; // per anchor
};

DecodedAnchors decode_anchors(std::span<const Anchor> anchors, const DecoderBank& bank,
                              const Vec3& camera_center, int appearance_id,
                              RenderDiagnostics* diag = nullptr);

struct ScaffoldGrads {
    std::vector<Vec3> dx_v;
    std::vector<VecX> dfeature;
    std::vector<std::vector<Vec3>> doffsets;
    std::vector<Vec3> dlog_lv;
    Mlp dopacity_head, dscale_rot_head, dcolor_head;
    std::vector<VecX> dappearance; // full table, only the used id is nonzero
};

ScaffoldGrads decode_anchors_backward(std::span<const Anchor> anchors,
                                      const DecoderBank& bank,
                                      const Vec3& camera_center, int appearance_id,
                                      const DecodedAnchors& decoded,
                                      const PreparedGrads& grads);

// ---------------------------------------------------------------------------
// Densification and pruning

/// Window-accumulated statistics, indexed anchor * k + slot for gradients and
/// per anchor for opacity.
struct AnchorStats {
    std::vector<Real> grad_norm_sum; // ||abs_grad2d|| summed over windows
    std::vector<int> grad_hits;      // rasterizations with at least one pixel hit
    std::vector<Real> opacity_sum;
    std::vector<int> opacity_count;

    void resize(size_t n_anchors, int k);
    void reset();
};

/// Qualifying slots (mean grad norm per hit above grow_threshold) vote their
/// positions into a voxel grid; one new anchor per unoccupied voxel, feature
/// copied from the voting anchor, offsets seeded with small noise.
std::vector<Anchor> densify_anchors(std::span<const Anchor> anchors,
                                    const AnchorStats& stats, int k, Real voxel_size,
                                    Real grow_threshold, Rng& rng);

struct PruneResult {
    std::vector<Anchor> retained;
    std::vector<uint8_t> keep; // per input anchor
};

/// Removes anchors whose window-mean opacity is below prune_threshold.
PruneResult prune_anchors(std::span<const Anchor> anchors, const AnchorStats& stats,
                          Real prune_threshold);

/// Voxel helpers shared with anchor initialization.
std::array<int64_t, 3> voxel_key(const Vec3& p, Real voxel_size);
Vec3 voxel_center(const std::array<int64_t, 3>& key, Real voxel_size);

} // namespace gsdiff
