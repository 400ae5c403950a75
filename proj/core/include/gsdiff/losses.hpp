#pragma once

#include "gsdiff/types.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gsdiff {

struct LossWeights {
    Real lambda_ssim = Real(0.2);
    Real lambda_gs = Real(0.5); // weight of the gated view-augmentation term
    Real lambda_sd = Real(0.1); // weight of the depth term
    Real epsilon = Real(0.5);   // perceptual gate threshold
    Real lambda_opacity = Real(0.01);
    Real lambda_scale = Real(0.01);
    Real lambda_aniso = Real(0.1);
    Real aniso_max_ratio = Real(10);

    void validate() const;
};

/// Scalar loss plus the gradient w.r.t. the first image argument.
/// `degenerate` marks the defined-zero cases (all-zero mask, zero variance).
struct ScalarLoss {
    Real value = 0;
    Image grad;
    bool degenerate = false;
};

/// lambda_ssim * (1 - SSIM) + (1 - lambda_ssim) * L1, every per-pixel term
/// multiplied by the mask before averaging over mask-active pixels. Both
/// images are pre-multiplied by the mask, so values under the mask can never
/// influence the loss and masked-pixel gradients are exactly zero.
ScalarLoss photometric_loss(const Image& rendered, const Image& target,
                            const Image* mask, Real lambda_ssim);

/// 1 - Pearson correlation over mask-active pixels; scale and shift invariant.
/// Gradient flows only to rendered_depth.
ScalarLoss depth_loss(const Image& rendered_depth, const Image& mono_depth,
                      const Image* mask);

/// Least-squares scale/shift-aligned L1 alternative behind the same interface.
ScalarLoss depth_loss_aligned_l1(const Image& rendered_depth, const Image& mono_depth,
                                 const Image* mask);

// ---------------------------------------------------------------------------
// Perceptual distance plug-in contract: deterministic, distance >= 0,
// differentiable w.r.t. the first image.

class PerceptualMetric {
public:
    virtual ~PerceptualMetric() = default;
    virtual ScalarLoss distance(const Image& a, const Image& b) const = 0;
    virtual std::string name() const = 0;
};

/// Default metric: 1 - MS-SSIM over up to 3 dyadic scales (scales whose
/// downsampled size falls below the 11-pixel window are dropped).
class MsSsimDistance final : public PerceptualMetric {
public:
    ScalarLoss distance(const Image& a, const Image& b) const override;
    std::string name() const override { return "ms-ssim"; }
};

/// File-backed stub for integration tests: distances looked up by the FNV-1a
/// hash of the second image's 8-bit quantization; gradient is zero.
class PrecomputedDistanceMetric final : public PerceptualMetric {
public:
    explicit PrecomputedDistanceMetric(const std::string& json_path);
    ScalarLoss distance(const Image& a, const Image& b) const override;
    std::string name() const override { return "precomputed"; }
    static uint64_t image_key(const Image& img);

private:
    std::vector<std::pair<uint64_t, Real>> table_;
};

struct GatedLoss {
    Real value = 0;
    Image grad;
    Real distance = 0;
    bool active = false; // distance <= epsilon
};

/// Eq-style gate: pass distance and gradient through when d <= epsilon,
/// otherwise both are exactly zero.
GatedLoss diffusion_loss(const Image& rendered, const Image& generated,
                         const PerceptualMetric& metric, Real epsilon);

// ---------------------------------------------------------------------------

struct RegularizationResult {
    Real value = 0;
    std::vector<Real> dopacity;   // per entry, zero where not selected
    std::vector<Vec3> dlog_scale;
};

/// lambda_opacity * mean(alpha) + lambda_scale * mean(sum exp(log_scale)) +
/// lambda_aniso * mean(max(max_scale/min_scale - r_max, 0)) over the selected
/// (visible) gaussians. `selected` may be empty to select all.
RegularizationResult regularization(std::span<const Real> opacity,
                                    std::span<const Vec3> log_scale,
                                    std::span<const uint8_t> selected,
                                    const LossWeights& w);

} // namespace gsdiff
