#pragma once

#include "gsdiff/rasterizer.hpp"

#include <span>
#include <vector>

namespace gsdiff {

/// View-resolved gaussians in SoA form, the common input of the render
/// pipeline for both the direct and the anchor-decoded path. Rotations are
/// raw wxyz 4-vectors; the pipeline normalizes (and differentiates through
/// the normalization).
struct PreparedGaussians {
    std::vector<Vec3> mu;
    std::vector<Vec3> log_scale;
    std::vector<Vec4> rotation;
    std::vector<Real> opacity; // linear, (0,1)
    std::vector<Vec3> rgb;

    size_t size() const { return mu.size(); }
    void resize(size_t n) {
        mu.resize(n);
        log_scale.resize(n);
        rotation.resize(n);
        opacity.resize(n);
        rgb.resize(n);
    }
};

struct PreparedGrads {
    std::vector<Vec3> dmu;
    std::vector<Vec3> dlog_scale;
    std::vector<Vec4> drotation;
    std::vector<Real> dopacity;
    std::vector<Vec3> drgb;
    // densification statistics mapped back to batch entries
    std::vector<Vec2> abs_grad2d, grad2d;
    std::vector<int> hit_count;
    std::vector<uint8_t> rendered; // entry produced a splat
};

struct RenderConfig {
    Vec3 background = Vec3::Zero();
    Real mip_variance = Real(0.1); // pixel^2
    Real tau_rel = Real(0.1);      // depth softmax temperature factor
    int n_threads = 1;
};

struct PipelineState {
    std::vector<Splat2D> premip;
    std::vector<Splat2D> splats;
    std::vector<int> batch_of_splat;
    ForwardResult raster;
};

PipelineState render_gaussians(const PreparedGaussians& batch,
                               const CameraIntrinsics& intrinsics, const Pose& pose,
                               const RenderConfig& cfg,
                               RenderDiagnostics* diag = nullptr);

PreparedGrads render_gaussians_backward(const PreparedGaussians& batch,
                                        const CameraIntrinsics& intrinsics,
                                        const Pose& pose, const RenderConfig& cfg,
                                        const PipelineState& state,
                                        std::span<const Real> dl_dcolor,
                                        std::span<const Real> dl_ddepth);

// ---------------------------------------------------------------------------
// Direct (non-anchor) path: sigmoid opacity, SH color

PreparedGaussians prepare_direct(std::span<const Gaussian3D> gaussians, const Pose& pose,
                                 RenderDiagnostics* diag = nullptr);

struct Gaussian3DGrad {
    Vec3 dmu = Vec3::Zero();
    Vec3 dlog_scale = Vec3::Zero();
    Vec4 drotation = Vec4::Zero();
    Real dopacity_logit = 0;
    std::vector<Vec3> dsh;
};

std::vector<Gaussian3DGrad> prepare_direct_backward(std::span<const Gaussian3D> gaussians,
                                                    const Pose& pose,
                                                    const PreparedGrads& grads);

/// Copies the rasterized color channel into an Image (same memory layout).
Image image_from_render(const RenderOutput& out);
Image depth_from_render(const RenderOutput& out);

} // namespace gsdiff
