#pragma once

#include "gsdiff/types.hpp"

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gsdiff {

struct CameraIntrinsics {
    Real fx = 0, fy = 0;
    Real cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const;
};

/// Rigid world-to-camera transform. Stored world-to-camera so projection in
/// the inner loops is a single rotate-and-translate.
struct Pose {
    Quat rotation = Quat::Identity(); // world-to-camera
    Vec3 translation = Vec3::Zero();

    static Pose identity() { return {}; }

    Vec3 apply(const Vec3& p_world) const {
        return rotation * p_world + translation;
    }
    Pose inverse() const;
    /// this ∘ other: applies `other` first, then this.
    Pose compose(const Pose& other) const;
    Vec3 camera_center() const { return rotation.conjugate() * (-translation); }
    Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }
};

struct View {
    CameraIntrinsics intrinsics;
    Pose pose;
    Image image;                      // H x W x 3, values in [0,1]
    std::optional<Image> mask;        // H x W x 1, 1 = static, 0 = dynamic
    std::optional<Image> mono_depth;  // H x W x 1, positive
    int appearance_id = 0;
    std::string name;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Spherical harmonics (offset-and-clamp convention: 0.5 + sum, clamped >= 0)

int sh_coeff_count(int degree);     // (degree+1)^2
int sh_degree_from_count(size_t n); // -1 if n is not a valid basis size

/// coeffs holds (L+1)^2 rgb triples, basis-major. dir must be unit length.
Vec3 evaluate_sh(std::span<const Vec3> coeffs, const Vec3& dir);

/// Same without the clamp at zero; used where the caller handles the clamp.
Vec3 evaluate_sh_raw(std::span<const Vec3> coeffs, const Vec3& dir);

struct ShBackward {
    std::vector<Vec3> dcoeffs;
    Vec3 ddir;
};
/// Gradient of evaluate_sh; the clamp at zero gates each channel's gradient.
ShBackward evaluate_sh_backward(std::span<const Vec3> coeffs, const Vec3& dir,
                                const Vec3& drgb);

// ---------------------------------------------------------------------------
// Pose trajectories

/// Catmull-Rom through keyframe translations (endpoint segments degrade to
/// linear), per-segment shortest-arc slerp for rotations. t in [0, n-1].
Pose interpolate_pose_spline(std::span<const Pose> keyframes, Real t);

/// The k unordered view pairs closest under
///   d(i,j) = |c_i - c_j| / s + w * geodesic_angle(R_i, R_j),
/// with s the bounding-box diagonal of all camera centers and w = 0.5.
/// Ties break by ascending (i, j). Returns all pairs when fewer than k exist.
std::vector<std::pair<int, int>> select_proximal_pairs(std::span<const View> views,
                                                       int k);

// ---------------------------------------------------------------------------
// Pinhole projection

struct PointProjection {
    Vec2 pixel;
    Real depth;
};

class behind_camera_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Throws behind_camera_error when the camera-space z is <= 1e-6.
PointProjection project_point(const CameraIntrinsics& intrinsics, const Pose& pose,
                              const Vec3& p_world);

Real quaternion_angle(const Quat& a, const Quat& b);

} // namespace gsdiff
