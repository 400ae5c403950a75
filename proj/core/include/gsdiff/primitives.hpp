#pragma once

#include "gsdiff/geometry.hpp"
#include "gsdiff/types.hpp"

#include <optional>
#include <span>
#include <vector>

namespace gsdiff {

/// One splat primitive. Scales are stored as logs and opacity as a logit so
/// the optimizer works on unconstrained values.
struct Gaussian3D {
    Vec3 mu = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Quat rotation = Quat::Identity();
    Real opacity_logit = 0;
    std::vector<Vec3> sh; // (L+1)^2 rgb triples, basis-major

    int sh_degree() const { return sh_degree_from_count(sh.size()); }
};

struct Splat2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity(); // pixel^2
    Real depth = 0;                // camera-space z, meters
    Real opacity = 0;              // (0,1), after mip compensation
    Vec3 color = Vec3::Zero();
    int source_id = 0;
};

/// Sigma = R S S^T R^T with S = diag(exp(log_scale)). The quaternion is
/// normalized internally, so slightly drifted inputs are tolerated.
Mat3 covariance_from(const Vec3& log_scale, const Quat& rotation);

struct CovarianceBackward {
    Vec3 dlog_scale;
    Vec4 drotation; // w.r.t. the raw (pre-normalization) quaternion, wxyz
};
CovarianceBackward covariance_from_backward(const Vec3& log_scale, const Quat& rotation,
                                            const Mat3& dSigma);

// ---------------------------------------------------------------------------
// EWA perspective projection

constexpr Real kNearPlane = Real(0.01);
/// Camera-space x/z and y/z entering the Jacobian are clamped to this multiple
/// of the frustum half-tangent.
constexpr Real kFrustumClamp = Real(1.3);

struct ProjectedGaussian {
    Vec2 mean2d;
    Mat2 cov2d;
    Real depth;
};

/// Projects mean and covariance only; returns nothing when the center is in
/// front of the near plane. Color/opacity resolution is the caller's job.
std::optional<ProjectedGaussian> project_mean_cov(const Vec3& mu, const Mat3& sigma,
                                                  const CameraIntrinsics& intrinsics,
                                                  const Pose& pose);

struct ProjectionBackward {
    Vec3 dmu;
    Mat3 dsigma;
};
ProjectionBackward project_mean_cov_backward(const Vec3& mu, const Mat3& sigma,
                                             const CameraIntrinsics& intrinsics,
                                             const Pose& pose, const Vec2& dmean2d,
                                             const Mat2& dcov2d, Real ddepth);

/// Full spec pipeline for one primitive: sigmoid opacity, SH color along the
/// anchor-to-camera direction, EWA mean/covariance. Culled -> nullopt.
std::optional<Splat2D> project_gaussian(const Gaussian3D& g,
                                        const CameraIntrinsics& intrinsics,
                                        const Pose& pose, int source_id = 0);

// ---------------------------------------------------------------------------
// Mip low-pass filter

/// cov2d += s*I with opacity scaled by sqrt(det_old/det_new) so the integrated
/// contribution is preserved. s = 0 is the exact identity.
Splat2D apply_mip_filter(const Splat2D& splat, Real s);

struct MipBackward {
    Mat2 dcov2d;   // w.r.t. pre-filter covariance
    Real dopacity; // w.r.t. pre-filter opacity
};
MipBackward apply_mip_filter_backward(const Splat2D& pre, Real s, const Mat2& dcov2d_post,
                                      Real dopacity_post);

} // namespace gsdiff
