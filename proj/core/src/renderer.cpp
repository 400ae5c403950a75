#include "gsdiff/renderer.hpp"

#include <cmath>

namespace gsdiff {

namespace {
Real sigmoid(Real x) { return Real(1) / (Real(1) + std::exp(-x)); }

Quat quat_of(const Vec4& v) { return Quat(v[0], v[1], v[2], v[3]); } // wxyz
} // namespace

PipelineState render_gaussians(const PreparedGaussians& batch,
                               const CameraIntrinsics& intrinsics, const Pose& pose,
                               const RenderConfig& cfg, RenderDiagnostics* diag) {
    PipelineState state;
    const size_t n = batch.size();
    state.premip.reserve(n);
    state.splats.reserve(n);
    state.batch_of_splat.reserve(n);

    const Real lim_x = kFrustumClamp * Real(intrinsics.width) / (2 * intrinsics.fx);
    const Real lim_y = kFrustumClamp * Real(intrinsics.height) / (2 * intrinsics.fy);

    for (size_t i = 0; i < n; ++i) {
        if (diag) {
            const Vec3 t = pose.apply(batch.mu[i]);
            diag->near_plane_margin =
                std::min(diag->near_plane_margin, std::abs(t.z() - kNearPlane));
            if (t.z() > kNearPlane) {
                diag->frustum_margin =
                    std::min({diag->frustum_margin,
                              std::abs(std::abs(t.x() / t.z()) - lim_x),
                              std::abs(std::abs(t.y() / t.z()) - lim_y)});
            }
        }
        const Mat3 sigma = covariance_from(batch.log_scale[i], quat_of(batch.rotation[i]));
        const auto proj = project_mean_cov(batch.mu[i], sigma, intrinsics, pose);
        if (!proj) continue;

        Splat2D pre;
        pre.mean2d = proj->mean2d;
        pre.cov2d = proj->cov2d;
        pre.depth = proj->depth;
        pre.opacity = batch.opacity[i];
        pre.color = batch.rgb[i];
        pre.source_id = static_cast<int>(i);
        state.premip.push_back(pre);
        state.splats.push_back(apply_mip_filter(pre, cfg.mip_variance));
        state.batch_of_splat.push_back(static_cast<int>(i));
    }

    state.raster = rasterize_forward(state.splats, intrinsics.width, intrinsics.height,
                                     cfg.background, cfg.tau_rel, cfg.n_threads, diag);
    return state;
}

PreparedGrads render_gaussians_backward(const PreparedGaussians& batch,
                                        const CameraIntrinsics& intrinsics,
                                        const Pose& pose, const RenderConfig& cfg,
                                        const PipelineState& state,
                                        std::span<const Real> dl_dcolor,
                                        std::span<const Real> dl_ddepth) {
    const size_t n = batch.size();
    PreparedGrads out;
    out.dmu.assign(n, Vec3::Zero());
    out.dlog_scale.assign(n, Vec3::Zero());
    out.drotation.assign(n, Vec4::Zero());
    out.dopacity.assign(n, Real(0));
    out.drgb.assign(n, Vec3::Zero());
    out.abs_grad2d.assign(n, Vec2::Zero());
    out.grad2d.assign(n, Vec2::Zero());
    out.hit_count.assign(n, 0);
    out.rendered.assign(n, 0);

    const BackwardResult raster = rasterize_backward(state.splats, state.raster.record,
                                                     dl_dcolor, dl_ddepth, cfg.n_threads);

    for (size_t s = 0; s < state.splats.size(); ++s) {
        const int bi = state.batch_of_splat[s];
        out.rendered[bi] = 1;
        out.abs_grad2d[bi] += raster.stats.abs_grad2d[s];
        out.grad2d[bi] += raster.stats.grad2d[s];
        out.hit_count[bi] += raster.stats.hit_count[s];

        const MipBackward mip = apply_mip_filter_backward(
            state.premip[s], cfg.mip_variance, raster.grads.dcov2d[s],
            raster.grads.dopacity[s]);

        const Mat3 sigma =
            covariance_from(batch.log_scale[bi], quat_of(batch.rotation[bi]));
        const ProjectionBackward proj = project_mean_cov_backward(
            batch.mu[bi], sigma, intrinsics, pose, raster.grads.dmean2d[s], mip.dcov2d,
            raster.grads.ddepth[s]);
        const CovarianceBackward cov = covariance_from_backward(
            batch.log_scale[bi], quat_of(batch.rotation[bi]), proj.dsigma);

        out.dmu[bi] += proj.dmu;
        out.dlog_scale[bi] += cov.dlog_scale;
        out.drotation[bi] += cov.drotation;
        out.dopacity[bi] += mip.dopacity;
        out.drgb[bi] += raster.grads.dcolor[s];
    }
    return out;
}

// ---------------------------------------------------------------------------

PreparedGaussians prepare_direct(std::span<const Gaussian3D> gaussians, const Pose& pose,
                                 RenderDiagnostics* diag) {
    PreparedGaussians batch;
    batch.resize(gaussians.size());
    const Vec3 cam = pose.camera_center();
    for (size_t i = 0; i < gaussians.size(); ++i) {
        const Gaussian3D& g = gaussians[i];
        batch.mu[i] = g.mu;
        batch.log_scale[i] = g.log_scale;
        batch.rotation[i] =
            Vec4(g.rotation.w(), g.rotation.x(), g.rotation.y(), g.rotation.z());
        batch.opacity[i] = sigmoid(g.opacity_logit);

        Vec3 delta = g.mu - cam;
        const Real dist = delta.norm();
        const Vec3 dir = dist > Real(1e-12) ? Vec3(delta / dist) : Vec3(0, 0, 1);
        const Vec3 raw = evaluate_sh_raw(g.sh, dir);
        if (diag)
            diag->color_clamp_margin =
                std::min({diag->color_clamp_margin, std::abs(raw.x()),
                          std::abs(raw.y()), std::abs(raw.z())});
        batch.rgb[i] = raw.cwiseMax(Real(0));
    }
    return batch;
}

std::vector<Gaussian3DGrad> prepare_direct_backward(std::span<const Gaussian3D> gaussians,
                                                    const Pose& pose,
                                                    const PreparedGrads& grads) {
    std::vector<Gaussian3DGrad> out(gaussians.size());
    const Vec3 cam = pose.camera_center();
    for (size_t i = 0; i < gaussians.size(); ++i) {
        const Gaussian3D& g = gaussians[i];
        Gaussian3DGrad& gg = out[i];
        gg.dsh.assign(g.sh.size(), Vec3::Zero());

        gg.dmu = grads.dmu[i];
        gg.dlog_scale = grads.dlog_scale[i];
        gg.drotation = grads.drotation[i];

        const Real opa = sigmoid(g.opacity_logit);
        gg.dopacity_logit = grads.dopacity[i] * opa * (Real(1) - opa);

        Vec3 delta = g.mu - cam;
        const Real dist = delta.norm();
        if (dist > Real(1e-12)) {
            const Vec3 dir = delta / dist;
            const ShBackward sh = evaluate_sh_backward(g.sh, dir, grads.drgb[i]);
            gg.dsh = sh.dcoeffs;
            // dir = delta/|delta|: J = (I - dir dir^T)/|delta|
            gg.dmu += (sh.ddir - dir * dir.dot(sh.ddir)) / dist;
        } else {
            const ShBackward sh = evaluate_sh_backward(g.sh, Vec3(0, 0, 1), grads.drgb[i]);
            gg.dsh = sh.dcoeffs;
        }
    }
    return out;
}

Image image_from_render(const RenderOutput& out) {
    Image img(out.width, out.height, 3);
    img.data = out.color;
    return img;
}

Image depth_from_render(const RenderOutput& out) {
    Image img(out.width, out.height, 1);
    img.data = out.depth;
    return img;
}

} // namespace gsdiff
