#pragma once

#include "gsdiff/primitives.hpp"
#include "gsdiff/types.hpp"

#include <limits>
#include <span>
#include <vector>

namespace gsdiff {

constexpr int kTileSize = 16;
constexpr Real kAlphaClamp = Real(0.99);
constexpr Real kAlphaCut = Real(1) / Real(255);
constexpr Real kTransmittanceFloor = Real(1e-4);

struct RenderOutput {
    int width = 0, height = 0;
    std::vector<Real> color;               // H*W*3
    std::vector<Real> depth;               // H*W, softmax-scaled; 0 where empty
    std::vector<Real> final_transmittance; // H*W
    std::vector<int> contrib_count;        // H*W
};

/// Per-pixel contributor index lists, retained between forward and backward.
struct BlendRecord {
    int width = 0, height = 0;
    Real tau_rel = Real(0.1);
    Vec3 background = Vec3::Zero();
    std::vector<uint32_t> offsets;      // H*W + 1
    std::vector<uint32_t> contributors; // splat indices, front-to-back per pixel
};

struct GradStats {
    std::vector<Vec2> abs_grad2d; // per-pixel |dL/dmean2d| accumulated
    std::vector<Vec2> grad2d;     // signed accumulation
    std::vector<int> hit_count;   // pixels the splat contributed to
};

struct SplatGrads {
    std::vector<Vec2> dmean2d;
    std::vector<Mat2> dcov2d;
    std::vector<Real> dopacity;
    std::vector<Vec3> dcolor;
    std::vector<Real> ddepth;
};

/// Distances to the rasterizer's non-smooth thresholds, for tests that need
/// finite-difference-safe scenes. Minima over every evaluated splat/pixel.
struct RenderDiagnostics {
    Real alpha_cut_margin = std::numeric_limits<Real>::infinity();
    Real alpha_clamp_margin = std::numeric_limits<Real>::infinity();
    Real termination_margin = std::numeric_limits<Real>::infinity();
    Real softmax_gap = std::numeric_limits<Real>::infinity();
    Real color_clamp_margin = std::numeric_limits<Real>::infinity();
    Real frustum_margin = std::numeric_limits<Real>::infinity();
    Real near_plane_margin = std::numeric_limits<Real>::infinity();
    Real opacity_gate_margin = std::numeric_limits<Real>::infinity();
    Real relu_margin = std::numeric_limits<Real>::infinity();

    void merge(const RenderDiagnostics& o);
    Real overall_min() const;
};

struct ForwardResult {
    RenderOutput out;
    BlendRecord record;
};

/// Tile-based alpha blending front-to-back with softmax-scaled depth.
/// The effective depth-softmax temperature per pixel is tau_rel times the
/// largest blend weight of that pixel. n_threads = 0 picks the hardware count;
/// results are bit-identical for any thread count.
ForwardResult rasterize_forward(std::span<const Splat2D> splats, int width, int height,
                                const Vec3& background, Real tau_rel,
                                int n_threads = 0, RenderDiagnostics* diag = nullptr);

struct BackwardResult {
    SplatGrads grads;
    GradStats stats;
};

/// Analytic gradients through the blend and depth softmax. dl_ddepth may be
/// empty (treated as zero). Reduction order is fixed (tiles, then record
/// order), independent of thread count.
BackwardResult rasterize_backward(std::span<const Splat2D> splats,
                                  const BlendRecord& record,
                                  std::span<const Real> dl_dcolor,
                                  std::span<const Real> dl_ddepth, int n_threads = 0);

} // namespace gsdiff
