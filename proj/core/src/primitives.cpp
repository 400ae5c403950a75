#include "gsdiff/primitives.hpp"

#include <cmath>

namespace gsdiff {

namespace {

Real sigmoid(Real x) { return Real(1) / (Real(1) + std::exp(-x)); }

Mat3 quat_to_matrix(Real w, Real x, Real y, Real z) {
    Mat3 R;
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return R;
}

/// dR/dq for a unit quaternion, one 3x3 slab per component (w,x,y,z).
void quat_matrix_jacobian(Real w, Real x, Real y, Real z, Mat3 dR[4]) {
    dR[0] << 0, -z, y, z, 0, -x, -y, x, 0;
    dR[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    dR[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    dR[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    for (int i = 0; i < 4; ++i) dR[i] *= Real(2);
}

} // namespace

Mat3 covariance_from(const Vec3& log_scale, const Quat& rotation) {
    const Real n = rotation.norm();
    const Real w = rotation.w() / n, x = rotation.x() / n, y = rotation.y() / n,
               z = rotation.z() / n;
    const Mat3 R = quat_to_matrix(w, x, y, z);
    const Vec3 s = log_scale.array().exp();
    const Mat3 M = R * s.asDiagonal();
    return M * M.transpose();
}

CovarianceBackward covariance_from_backward(const Vec3& log_scale, const Quat& rotation,
                                            const Mat3& dSigma) {
    const Real n = rotation.norm();
    const Real w = rotation.w() / n, x = rotation.x() / n, y = rotation.y() / n,
               z = rotation.z() / n;
    const Mat3 R = quat_to_matrix(w, x, y, z);
    const Vec3 s = log_scale.array().exp();
    const Mat3 M = R * s.asDiagonal();

    const Mat3 dM = (dSigma + dSigma.transpose()) * M;
    const Mat3 dR = dM * s.asDiagonal();

    CovarianceBackward out;
    for (int i = 0; i < 3; ++i)
        out.dlog_scale[i] = dM.col(i).dot(R.col(i)) * s[i];

    Mat3 dRdq[4];
    quat_matrix_jacobian(w, x, y, z, dRdq);
    Vec4 dq_unit;
    for (int c = 0; c < 4; ++c) dq_unit[c] = dRdq[c].cwiseProduct(dR).sum();

    // Through the normalization q_hat = q / |q|.
    const Vec4 q_hat(w, x, y, z);
    out.drotation = (dq_unit - q_hat * q_hat.dot(dq_unit)) / n;
    return out;
}

// ---------------------------------------------------------------------------

std::optional<ProjectedGaussian> project_mean_cov(const Vec3& mu, const Mat3& sigma,
                                                  const CameraIntrinsics& intrinsics,
                                                  const Pose& pose) {
    const Vec3 t = pose.apply(mu);
    if (t.z() <= kNearPlane) return std::nullopt;
    const Real z = t.z();

    const Real lim_x = kFrustumClamp * Real(intrinsics.width) / (2 * intrinsics.fx);
    const Real lim_y = kFrustumClamp * Real(intrinsics.height) / (2 * intrinsics.fy);
    const Real xc = std::clamp(t.x() / z, -lim_x, lim_x) * z;
    const Real yc = std::clamp(t.y() / z, -lim_y, lim_y) * z;

    Eigen::Matrix<Real, 2, 3> J;
    J << intrinsics.fx / z, 0, -intrinsics.fx * xc / (z * z), //
        0, intrinsics.fy / z, -intrinsics.fy * yc / (z * z);

    const Eigen::Matrix<Real, 2, 3> M = J * pose.rotation_matrix();

    ProjectedGaussian out;
    out.mean2d = Vec2(intrinsics.fx * t.x() / z + intrinsics.cx,
                      intrinsics.fy * t.y() / z + intrinsics.cy);
    out.cov2d = M * sigma * M.transpose();
    out.depth = z;
    return out;
}

ProjectionBackward project_mean_cov_backward(const Vec3& mu, const Mat3& sigma,
                                             const CameraIntrinsics& intrinsics,
                                             const Pose& pose, const Vec2& dmean2d,
                                             const Mat2& dcov2d, Real ddepth) {
    const Vec3 t = pose.apply(mu);
    const Real z = t.z();
    const Real fx = intrinsics.fx, fy = intrinsics.fy;

    const Real lim_x = kFrustumClamp * Real(intrinsics.width) / (2 * fx);
    const Real lim_y = kFrustumClamp * Real(intrinsics.height) / (2 * fy);
    const Real rx = t.x() / z, ry = t.y() / z;
    const bool clamped_x = rx < -lim_x || rx > lim_x;
    const bool clamped_y = ry < -lim_y || ry > lim_y;
    const Real xc = std::clamp(rx, -lim_x, lim_x) * z;
    const Real yc = std::clamp(ry, -lim_y, lim_y) * z;

    Eigen::Matrix<Real, 2, 3> J;
    J << fx / z, 0, -fx * xc / (z * z), //
        0, fy / z, -fy * yc / (z * z);
    const Mat3 W = pose.rotation_matrix();
    const Eigen::Matrix<Real, 2, 3> M = J * W;

    // cov2d = M Sigma M^T
    const Eigen::Matrix<Real, 2, 3> dM =
        (dcov2d + dcov2d.transpose()) * M * sigma;
    const Eigen::Matrix<Real, 2, 3> dJ = dM * W.transpose();

    Vec3 dt = Vec3::Zero();
    // J00 = fx/z, J11 = fy/z
    dt.z() += dJ(0, 0) * (-fx / (z * z)) + dJ(1, 1) * (-fy / (z * z));
    // J02 = -fx*xc/z^2, J12 = -fy*yc/z^2
    const Real dxc = dJ(0, 2) * (-fx / (z * z));
    const Real dyc = dJ(1, 2) * (-fy / (z * z));
    dt.z() += dJ(0, 2) * (2 * fx * xc / (z * z * z)) +
              dJ(1, 2) * (2 * fy * yc / (z * z * z));
    if (clamped_x)
        dt.z() += dxc * (xc / z); // xc = +-lim_x * z
    else
        dt.x() += dxc;
    if (clamped_y)
        dt.z() += dyc * (yc / z);
    else
        dt.y() += dyc;

    // mean2d = (fx x/z + cx, fy y/z + cy), unclamped
    dt.x() += dmean2d.x() * fx / z;
    dt.z() += dmean2d.x() * (-fx * t.x() / (z * z));
    dt.y() += dmean2d.y() * fy / z;
    dt.z() += dmean2d.y() * (-fy * t.y() / (z * z));

    dt.z() += ddepth;

    ProjectionBackward out;
    out.dmu = W.transpose() * dt;
    out.dsigma = M.transpose() * dcov2d * M;
    return out;
}

std::optional<Splat2D> project_gaussian(const Gaussian3D& g,
                                        const CameraIntrinsics& intrinsics,
                                        const Pose& pose, int source_id) {
    const Mat3 sigma = covariance_from(g.log_scale, g.rotation);
    const auto proj = project_mean_cov(g.mu, sigma, intrinsics, pose);
    if (!proj) return std::nullopt;

    Vec3 delta = g.mu - pose.camera_center();
    const Real dist = delta.norm();
    const Vec3 dir = dist > Real(1e-12) ? Vec3(delta / dist) : Vec3(0, 0, 1);

    Splat2D splat;
    splat.mean2d = proj->mean2d;
    splat.cov2d = proj->cov2d;
    splat.depth = proj->depth;
    splat.opacity = sigmoid(g.opacity_logit);
    splat.color = evaluate_sh(g.sh, dir);
    splat.source_id = source_id;
    return splat;
}

// ---------------------------------------------------------------------------

Splat2D apply_mip_filter(const Splat2D& splat, Real s) {
    require(s >= Real(0), "apply_mip_filter: filter variance must be >= 0");
    if (s == Real(0)) return splat;

    Splat2D out = splat;
    const Real det_old = std::max(splat.cov2d.determinant(), Real(0));
    out.cov2d = splat.cov2d + s * Mat2::Identity();
    const Real det_new = out.cov2d.determinant();
    out.opacity = splat.opacity * std::sqrt(det_old / det_new);
    return out;
}

MipBackward apply_mip_filter_backward(const Splat2D& pre, Real s, const Mat2& dcov2d_post,
                                      Real dopacity_post) {
    MipBackward out;
    if (s == Real(0)) {
        out.dcov2d = dcov2d_post;
        out.dopacity = dopacity_post;
        return out;
    }
    const Mat2 cov_new = pre.cov2d + s * Mat2::Identity();
    const Real det_old = pre.cov2d.determinant();
    const Real det_new = cov_new.determinant();

    out.dcov2d = dcov2d_post;
    if (det_old > Real(1e-300)) {
        const Real comp = std::sqrt(det_old / det_new);
        out.dopacity = dopacity_post * comp;
        const Mat2 dcomp_dcov =
            Real(0.5) * comp * (pre.cov2d.inverse() - cov_new.inverse());
        out.dcov2d += dopacity_post * pre.opacity * dcomp_dcov;
    } else {
        out.dopacity = Real(0);
    }
    return out;
}

} // namespace gsdiff
