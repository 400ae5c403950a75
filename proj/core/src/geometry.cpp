#include "gsdiff/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace gsdiff {

void CameraIntrinsics::validate() const {
    require(fx > 0 && fy > 0, "intrinsics: focal lengths must be positive");
    require(width > 0 && height > 0, "intrinsics: image size must be positive");
    require(cx >= 0 && cx <= Real(width), "intrinsics: cx out of range");
    require(cy >= 0 && cy <= Real(height), "intrinsics: cy out of range");
}

void View::validate() const {
    intrinsics.validate();
    require(image.width == intrinsics.width && image.height == intrinsics.height,
            "view: image dimensions do not match intrinsics");
    require(image.channels == 3, "view: image must have 3 channels");
    if (mask) {
        require(mask->width == image.width && mask->height == image.height &&
                    mask->channels == 1,
                "view: mask dimensions do not match image");
        for (Real v : mask->data)
            require(v == Real(0) || v == Real(1), "view: mask values must be 0 or 1");
    }
    if (mono_depth) {
        require(mono_depth->width == image.width && mono_depth->height == image.height &&
                    mono_depth->channels == 1,
                "view: mono_depth dimensions do not match image");
        for (int r = 0; r < mono_depth->height; ++r)
            for (int c = 0; c < mono_depth->width; ++c) {
                if (mask && mask->at(r, c) == Real(0)) continue;
                const Real d = mono_depth->at(r, c);
                require(std::isfinite(static_cast<double>(d)) && d > Real(0),
                        "view: mono_depth must be finite and positive on static pixels");
            }
    }
}

Pose Pose::inverse() const {
    Pose inv;
    inv.rotation = rotation.conjugate();
    inv.translation = -(inv.rotation * translation);
    return inv;
}

Pose Pose::compose(const Pose& other) const {
    Pose out;
    out.rotation = rotation * other.rotation;
    out.rotation.normalize();
    out.translation = rotation * other.translation + translation;
    return out;
}

// ---------------------------------------------------------------------------
// Spherical harmonics

namespace {
constexpr Real kSH0 = Real(0.28209479177387814);
constexpr Real kSH1 = Real(0.4886025119029199);
constexpr Real kSH2[5] = {Real(1.0925484305920792), Real(-1.0925484305920792),
                          Real(0.31539156525252005), Real(-1.0925484305920792),
                          Real(0.5462742152960396)};
constexpr Real kSH3[7] = {Real(-0.5900435899266435), Real(2.890611442640554),
                          Real(-0.4570457994644658), Real(0.3731763325901154),
                          Real(-0.4570457994644658), Real(1.445305721320277),
                          Real(-0.5900435899266435)};

/// Basis values for degrees 0..3 in the conventional splatting order.
void sh_basis(int degree, const Vec3& dir, Real* basis) {
    const Real x = dir.x(), y = dir.y(), z = dir.z();
    basis[0] = kSH0;
    if (degree < 1) return;
    basis[1] = -kSH1 * y;
    basis[2] = kSH1 * z;
    basis[3] = -kSH1 * x;
    if (degree < 2) return;
    const Real xx = x * x, yy = y * y, zz = z * z;
    const Real xy = x * y, yz = y * z, xz = x * z;
    basis[4] = kSH2[0] * xy;
    basis[5] = kSH2[1] * yz;
    basis[6] = kSH2[2] * (Real(2) * zz - xx - yy);
    basis[7] = kSH2[3] * xz;
    basis[8] = kSH2[4] * (xx - yy);
    if (degree < 3) return;
    basis[9] = kSH3[0] * y * (Real(3) * xx - yy);
    basis[10] = kSH3[1] * xy * z;
    basis[11] = kSH3[2] * y * (Real(4) * zz - xx - yy);
    basis[12] = kSH3[3] * z * (Real(2) * zz - Real(3) * xx - Real(3) * yy);
    basis[13] = kSH3[4] * x * (Real(4) * zz - xx - yy);
    basis[14] = kSH3[5] * z * (xx - yy);
    basis[15] = kSH3[6] * x * (xx - Real(3) * yy);
}

/// d(basis)/d(dir), 16 x 3 at most.
void sh_basis_jacobian(int degree, const Vec3& dir, Vec3* dbasis) {
    const Real x = dir.x(), y = dir.y(), z = dir.z();
    dbasis[0] = Vec3::Zero();
    if (degree < 1) return;
    dbasis[1] = Vec3(0, -kSH1, 0);
    dbasis[2] = Vec3(0, 0, kSH1);
    dbasis[3] = Vec3(-kSH1, 0, 0);
    if (degree < 2) return;
    dbasis[4] = kSH2[0] * Vec3(y, x, 0);
    dbasis[5] = kSH2[1] * Vec3(0, z, y);
    dbasis[6] = kSH2[2] * Vec3(Real(-2) * x, Real(-2) * y, Real(4) * z);
    dbasis[7] = kSH2[3] * Vec3(z, 0, x);
    dbasis[8] = kSH2[4] * Vec3(Real(2) * x, Real(-2) * y, 0);
    if (degree < 3) return;
    dbasis[9] = kSH3[0] * Vec3(Real(6) * x * y, Real(3) * x * x - Real(3) * y * y, 0);
    dbasis[10] = kSH3[1] * Vec3(y * z, x * z, x * y);
    dbasis[11] = kSH3[2] * Vec3(Real(-2) * x * y,
                                Real(4) * z * z - x * x - Real(3) * y * y,
                                Real(8) * y * z);
    dbasis[12] = kSH3[3] * Vec3(Real(-6) * x * z, Real(-6) * y * z,
                                Real(6) * z * z - Real(3) * x * x - Real(3) * y * y);
    dbasis[13] = kSH3[4] * Vec3(Real(4) * z * z - Real(3) * x * x - y * y,
                                Real(-2) * x * y, Real(8) * x * z);
    dbasis[14] = kSH3[5] * Vec3(Real(2) * x * z, Real(-2) * y * z, x * x - y * y);
    dbasis[15] = kSH3[6] * Vec3(Real(3) * x * x - Real(3) * y * y,
                                Real(-6) * x * y, 0);
}
} // namespace

int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

int sh_degree_from_count(size_t n) {
    for (int l = 0; l <= 3; ++l)
        if (static_cast<size_t>(sh_coeff_count(l)) == n) return l;
    return -1;
}

Vec3 evaluate_sh_raw(std::span<const Vec3> coeffs, const Vec3& dir) {
    const int degree = sh_degree_from_count(coeffs.size());
    require(degree >= 0, "evaluate_sh: coefficient count is not (L+1)^2 for L in 0..3");
    Real basis[16];
    sh_basis(degree, dir, basis);
    Vec3 rgb = Vec3::Constant(Real(0.5));
    for (size_t i = 0; i < coeffs.size(); ++i) rgb += basis[i] * coeffs[i];
    return rgb;
}

Vec3 evaluate_sh(std::span<const Vec3> coeffs, const Vec3& dir) {
    return evaluate_sh_raw(coeffs, dir).cwiseMax(Real(0));
}

ShBackward evaluate_sh_backward(std::span<const Vec3> coeffs, const Vec3& dir,
                                const Vec3& drgb) {
    const int degree = sh_degree_from_count(coeffs.size());
    require(degree >= 0, "evaluate_sh: coefficient count is not (L+1)^2 for L in 0..3");
    Real basis[16];
    Vec3 dbasis[16];
    sh_basis(degree, dir, basis);
    sh_basis_jacobian(degree, dir, dbasis);

    // Clamp gate: channels whose raw value is negative pass no gradient.
    Vec3 raw = Vec3::Constant(Real(0.5));
    for (size_t i = 0; i < coeffs.size(); ++i) raw += basis[i] * coeffs[i];
    Vec3 gated = drgb;
    for (int c = 0; c < 3; ++c)
        if (raw[c] < Real(0)) gated[c] = Real(0);

    ShBackward out;
    out.dcoeffs.resize(coeffs.size());
    out.ddir = Vec3::Zero();
    for (size_t i = 0; i < coeffs.size(); ++i) {
        out.dcoeffs[i] = gated * basis[i];
        out.ddir += dbasis[i] * gated.dot(coeffs[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pose trajectories

namespace {
Quat slerp_shortest(const Quat& a, const Quat& b, Real s) {
    Quat bb = b;
    if (a.dot(b) < Real(0)) bb.coeffs() = -bb.coeffs();
    return a.slerp(s, bb).normalized();
}
} // namespace

Pose interpolate_pose_spline(std::span<const Pose> keyframes, Real t) {
    require(keyframes.size() >= 2, "pose spline: need at least 2 keyframes");
    require(std::isfinite(static_cast<double>(t)), "pose spline: t must be finite");
    const int n = static_cast<int>(keyframes.size());
    require(t >= Real(0) && t <= Real(n - 1), "pose spline: t out of range");

    const int seg = std::min(static_cast<int>(std::floor(t)), n - 2);
    const Real s = t - Real(seg);
    if (s == Real(0)) return keyframes[seg];
    if (s == Real(1)) return keyframes[seg + 1];

    const Vec3& p1 = keyframes[seg].translation;
    const Vec3& p2 = keyframes[seg + 1].translation;

    Vec3 translation;
    if (seg == 0 || seg == n - 2) {
        // Endpoint segments degrade to linear.
        translation = (Real(1) - s) * p1 + s * p2;
    } else {
        const Vec3& p0 = keyframes[seg - 1].translation;
        const Vec3& p3 = keyframes[seg + 2].translation;
        const Vec3 m1 = (p2 - p0) * Real(0.5);
        const Vec3 m2 = (p3 - p1) * Real(0.5);
        const Real s2 = s * s, s3 = s2 * s;
        translation = (Real(2) * s3 - Real(3) * s2 + Real(1)) * p1 +
                      (s3 - Real(2) * s2 + s) * m1 +
                      (Real(-2) * s3 + Real(3) * s2) * p2 + (s3 - s2) * m2;
    }

    Pose out;
    out.translation = translation;
    out.rotation = slerp_shortest(keyframes[seg].rotation,
                                  keyframes[seg + 1].rotation, s);
    return out;
}

Real quaternion_angle(const Quat& a, const Quat& b) {
    Real d = std::abs(a.dot(b));
    d = std::min(d, Real(1));
    return Real(2) * std::acos(d);
}

// ---------------------------------------------------------------------------

std::vector<std::pair<int, int>> select_proximal_pairs(std::span<const View> views,
                                                       int k) {
    require(views.size() >= 2, "select_proximal_pairs: need at least 2 views");
    require(k >= 1, "select_proximal_pairs: k must be >= 1");
    const int n = static_cast<int>(views.size());

    std::vector<Vec3> centers(n);
    for (int i = 0; i < n; ++i) centers[i] = views[i].pose.camera_center();

    Vec3 lo = centers[0], hi = centers[0];
    for (const Vec3& c : centers) {
        lo = lo.cwiseMin(c);
        hi = hi.cwiseMax(c);
    }
    Real diag = (hi - lo).norm();
    if (diag < Real(1e-12)) diag = Real(1);

    constexpr Real kRotationWeight = Real(0.5);
    struct ScoredPair {
        Real d;
        int i, j;
    };
    std::vector<ScoredPair> pairs;
    pairs.reserve(static_cast<size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const Real d = (centers[i] - centers[j]).norm() / diag +
                           kRotationWeight *
                               quaternion_angle(views[i].pose.rotation,
                                                views[j].pose.rotation);
            pairs.push_back({d, i, j});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const ScoredPair& a, const ScoredPair& b) {
        if (a.d != b.d) return a.d < b.d;
        if (a.i != b.i) return a.i < b.i;
        return a.j < b.j;
    });

    const size_t count = std::min<size_t>(static_cast<size_t>(k), pairs.size());
    std::vector<std::pair<int, int>> out;
    out.reserve(count);
    for (size_t p = 0; p < count; ++p) out.emplace_back(pairs[p].i, pairs[p].j);
    return out;
}

PointProjection project_point(const CameraIntrinsics& intrinsics, const Pose& pose,
                              const Vec3& p_world) {
    const Vec3 t = pose.apply(p_world);
    if (t.z() <= Real(1e-6))
        throw behind_camera_error("project_point: point behind camera (z = " +
                                  std::to_string(static_cast<double>(t.z())) + ")");
    return {Vec2(intrinsics.fx * t.x() / t.z() + intrinsics.cx,
                 intrinsics.fy * t.y() / t.z() + intrinsics.cy),
            t.z()};
}

} // namespace gsdiff
