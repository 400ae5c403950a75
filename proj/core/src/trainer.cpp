#include "gsdiff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace gsdiff {

void TrainConfig::validate() const {
    require(iterations > 0, "config: iterations must be positive");
    require(model == "scaffold" || model == "direct",
            "config: model must be 'scaffold' or 'direct'");
    require(sh_degree >= 0 && sh_degree <= 3, "config: sh_degree in 0..3");
    require(feature_dim > 0 && offsets_per_anchor > 0 && appearance_dim > 0 &&
                hidden_dim > 0,
            "config: decoder dimensions must be positive");
    require(position_lr_final_ratio > 0 && position_lr_final_ratio <= 1,
            "config: position_lr_final_ratio in (0,1]");
    const Real lrs[] = {lr.anchor_position, lr.offsets,  lr.features,
                        lr.anchor_scaling,  lr.decoders, lr.embeddings,
                        lr.position,        lr.log_scale, lr.rotation,
                        lr.opacity,         lr.sh};
    for (Real l : lrs) require(l > 0, "config: learning rates must be positive");
    require(densify.interval > 0, "config: densify interval must be positive");
    require(render.mip_variance >= 0, "config: mip variance must be >= 0");
    require(render.tau_rel > 0, "config: tau must be positive");
    loss.validate();
    augment.validate();
}

// ---------------------------------------------------------------------------
// ParamGroup

void ParamGroup::init(std::string group_name, size_t n, Real learning_rate, bool decay) {
    name = std::move(group_name);
    value.assign(n, Real(0));
    grad.assign(n, Real(0));
    m.assign(n, Real(0));
    v.assign(n, Real(0));
    step = 0;
    lr = learning_rate;
    decayed = decay;
}

void ParamGroup::zero_grad() { std::fill(grad.begin(), grad.end(), Real(0)); }

void ParamGroup::adam_step(Real lr_scale, const AdamParams& params) {
    ++step;
    const Real bc1 = Real(1) - std::pow(params.beta1, Real(step));
    const Real bc2 = Real(1) - std::pow(params.beta2, Real(step));
    const Real rate = lr * lr_scale;
    for (size_t i = 0; i < value.size(); ++i) {
        m[i] = params.beta1 * m[i] + (Real(1) - params.beta1) * grad[i];
        v[i] = params.beta2 * v[i] + (Real(1) - params.beta2) * grad[i] * grad[i];
        const Real mhat = m[i] / bc1;
        const Real vhat = v[i] / bc2;
        value[i] -= rate * mhat / (std::sqrt(vhat) + params.eps);
    }
}

void ParamGroup::append_rows(std::span<const Real> rows) {
    value.insert(value.end(), rows.begin(), rows.end());
    grad.resize(value.size(), Real(0));
    m.resize(value.size(), Real(0));
    v.resize(value.size(), Real(0));
}

void ParamGroup::keep_rows(const std::vector<uint8_t>& keep, size_t stride) {
    require(keep.size() * stride == value.size(), "param group: keep mask mismatch");
    size_t w = 0;
    for (size_t r = 0; r < keep.size(); ++r) {
        if (!keep[r]) continue;
        for (size_t c = 0; c < stride; ++c) {
            value[w * stride + c] = value[r * stride + c];
            grad[w * stride + c] = grad[r * stride + c];
            m[w * stride + c] = m[r * stride + c];
            v[w * stride + c] = v[r * stride + c];
        }
        ++w;
    }
    value.resize(w * stride);
    grad.resize(w * stride);
    m.resize(w * stride);
    v.resize(w * stride);
}

// ---------------------------------------------------------------------------
// DirectModel

std::vector<Gaussian3D> DirectModel::to_gaussians() const {
    std::vector<Gaussian3D> out(count);
    for (int i = 0; i < count; ++i) {
        Gaussian3D& g = out[i];
        g.mu = Vec3(mu.value[3 * i], mu.value[3 * i + 1], mu.value[3 * i + 2]);
        g.log_scale = Vec3(log_scale.value[3 * i], log_scale.value[3 * i + 1],
                           log_scale.value[3 * i + 2]);
        g.rotation = Quat(rotation.value[4 * i], rotation.value[4 * i + 1],
                          rotation.value[4 * i + 2], rotation.value[4 * i + 3]);
        g.opacity_logit = opacity.value[i];
        g.sh.resize(sh_basis);
        for (int b = 0; b < sh_basis; ++b)
            g.sh[b] = Vec3(sh.value[(static_cast<size_t>(i) * sh_basis + b) * 3],
                           sh.value[(static_cast<size_t>(i) * sh_basis + b) * 3 + 1],
                           sh.value[(static_cast<size_t>(i) * sh_basis + b) * 3 + 2]);
    }
    return out;
}

DirectModel DirectModel::from_gaussians(std::span<const Gaussian3D> gaussians,
                                        const LearningRates& lr) {
    require(!gaussians.empty(), "direct model: need at least one gaussian");
    DirectModel model;
    model.count = static_cast<int>(gaussians.size());
    model.sh_basis = static_cast<int>(gaussians[0].sh.size());
    require(model.sh_basis > 0, "direct model: gaussians need SH coefficients");

    const size_t n = gaussians.size();
    model.mu.init("mu", n * 3, lr.position, true);
    model.log_scale.init("log_scale", n * 3, lr.log_scale, false);
    model.rotation.init("rotation", n * 4, lr.rotation, false);
    model.opacity.init("opacity", n, lr.opacity, false);
    model.sh.init("sh", n * model.sh_basis * 3, lr.sh, false);

    for (size_t i = 0; i < n; ++i) {
        const Gaussian3D& g = gaussians[i];
        require(static_cast<int>(g.sh.size()) == model.sh_basis,
                "direct model: inconsistent SH sizes");
        for (int c = 0; c < 3; ++c) {
            model.mu.value[3 * i + c] = g.mu[c];
            model.log_scale.value[3 * i + c] = g.log_scale[c];
        }
        model.rotation.value[4 * i] = g.rotation.w();
        model.rotation.value[4 * i + 1] = g.rotation.x();
        model.rotation.value[4 * i + 2] = g.rotation.y();
        model.rotation.value[4 * i + 3] = g.rotation.z();
        model.opacity.value[i] = g.opacity_logit;
        for (int b = 0; b < model.sh_basis; ++b)
            for (int c = 0; c < 3; ++c)
                model.sh.value[(i * model.sh_basis + b) * 3 + c] = g.sh[b][c];
    }
    return model;
}

void DirectModel::renormalize_rotations() {
    for (int i = 0; i < count; ++i) {
        Real* q = &rotation.value[4 * i];
        const Real n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
        if (n < Real(1e-12)) {
            q[0] = 1;
            q[1] = q[2] = q[3] = 0;
        } else {
            for (int c = 0; c < 4; ++c) q[c] /= n;
        }
    }
}

// ---------------------------------------------------------------------------
// ScaffoldModel

std::vector<Anchor> ScaffoldModel::anchors() const {
    std::vector<Anchor> out(anchor_count);
    for (int a = 0; a < anchor_count; ++a) {
        Anchor& an = out[a];
        an.x_v = Vec3(positions.value[3 * a], positions.value[3 * a + 1],
                      positions.value[3 * a + 2]);
        an.feature = VecX(feature_dim);
        for (int f = 0; f < feature_dim; ++f)
            an.feature[f] = features.value[static_cast<size_t>(a) * feature_dim + f];
        an.offsets.resize(k);
        for (int i = 0; i < k; ++i)
            for (int c = 0; c < 3; ++c)
                an.offsets[i][c] =
                    offsets.value[(static_cast<size_t>(a) * k + i) * 3 + c];
        an.log_lv = Vec3(scalings.value[3 * a], scalings.value[3 * a + 1],
                         scalings.value[3 * a + 2]);
    }
    return out;
}

DecoderBank ScaffoldModel::bank() const {
    DecoderBank bank;
    bank.feature_dim = feature_dim;
    bank.k = k;
    bank.appearance_dim = appearance_dim;
    bank.hidden = hidden;
    bank.opacity_head = Mlp::create(feature_dim + 4, hidden, k);
    bank.scale_rot_head = Mlp::create(feature_dim + 4, hidden, 7 * k);
    bank.color_head = Mlp::create(feature_dim + 4 + appearance_dim, hidden, 3 * k);

    const size_t n0 = bank.opacity_head.param_count();
    const size_t n1 = bank.scale_rot_head.param_count();
    const size_t n2 = bank.color_head.param_count();
    require(decoders.value.size() == n0 + n1 + n2, "scaffold: decoder size mismatch");
    std::span<const Real> flat(decoders.value);
    bank.opacity_head.from_flat(flat.subspan(0, n0));
    bank.scale_rot_head.from_flat(flat.subspan(n0, n1));
    bank.color_head.from_flat(flat.subspan(n0 + n1, n2));

    bank.appearance_table.assign(n_images, VecX::Zero(appearance_dim));
    for (int img = 0; img < n_images; ++img)
        for (int e = 0; e < appearance_dim; ++e)
            bank.appearance_table[img][e] =
                embeddings.value[static_cast<size_t>(img) * appearance_dim + e];
    return bank;
}

ScaffoldModel ScaffoldModel::assemble(std::span<const Anchor> anchors,
                                      const DecoderBank& bank,
                                      const LearningRates& lr) {
    ScaffoldModel model;
    model.anchor_count = static_cast<int>(anchors.size());
    model.feature_dim = bank.feature_dim;
    model.k = bank.k;
    model.appearance_dim = bank.appearance_dim;
    model.hidden = bank.hidden;
    model.n_images = static_cast<int>(bank.appearance_table.size());

    const size_t n = anchors.size();
    model.positions.init("anchor_positions", n * 3, lr.anchor_position, true);
    model.features.init("features", n * bank.feature_dim, lr.features, false);
    model.offsets.init("offsets", n * bank.k * 3, lr.offsets, false);
    model.scalings.init("anchor_scalings", n * 3, lr.anchor_scaling, false);
    const size_t dec_n = bank.opacity_head.param_count() +
                         bank.scale_rot_head.param_count() +
                         bank.color_head.param_count();
    model.decoders.init("decoders", dec_n, lr.decoders, false);
    model.embeddings.init("embeddings",
                          static_cast<size_t>(model.n_images) * bank.appearance_dim,
                          lr.embeddings, false);

    for (size_t a = 0; a < n; ++a) {
        for (int c = 0; c < 3; ++c) {
            model.positions.value[3 * a + c] = anchors[a].x_v[c];
            model.scalings.value[3 * a + c] = anchors[a].log_lv[c];
        }
        for (int f = 0; f < bank.feature_dim; ++f)
            model.features.value[a * bank.feature_dim + f] = anchors[a].feature[f];
        for (int i = 0; i < bank.k; ++i)
            for (int c = 0; c < 3; ++c)
                model.offsets.value[(a * bank.k + i) * 3 + c] = anchors[a].offsets[i][c];
    }

    std::span<Real> flat(model.decoders.value);
    const size_t n0 = bank.opacity_head.param_count();
    const size_t n1 = bank.scale_rot_head.param_count();
    bank.opacity_head.to_flat(flat.subspan(0, n0));
    bank.scale_rot_head.to_flat(flat.subspan(n0, n1));
    bank.color_head.to_flat(flat.subspan(n0 + n1));

    for (int img = 0; img < model.n_images; ++img)
        for (int e = 0; e < bank.appearance_dim; ++e)
            model.embeddings.value[static_cast<size_t>(img) * bank.appearance_dim + e] =
                bank.appearance_table[img][e];
    return model;
}

// ---------------------------------------------------------------------------
// Initialization

ScaffoldInit init_from_points(const PointCloud& points, Real voxel_size, int feature_dim,
                              int k, int appearance_dim, int hidden, int n_images,
                              Rng& rng) {
    require(!points.positions.empty(), "init_from_points: empty point set");
    require(voxel_size > 0, "init_from_points: voxel size must be positive");

    ScaffoldInit out;
    std::set<std::array<int64_t, 3>> seen;
    for (const Vec3& p : points.positions) {
        const auto key = voxel_key(p, voxel_size);
        if (seen.count(key)) continue;
        seen.insert(key);
        Anchor anchor;
        anchor.x_v = voxel_center(key, voxel_size);
        anchor.feature = VecX::Zero(feature_dim);
        anchor.offsets.resize(k);
        for (auto& o : anchor.offsets)
            o = Vec3(rng.normal(), rng.normal(), rng.normal()) * Real(0.01);
        anchor.log_lv = Vec3::Constant(std::log(voxel_size));
        out.anchors.push_back(std::move(anchor));
    }
    out.bank = DecoderBank::init(feature_dim, k, appearance_dim, hidden, n_images, rng);
    return out;
}

std::vector<Gaussian3D> init_direct_from_points(const PointCloud& points, int sh_degree) {
    require(!points.positions.empty(), "init_from_points: empty point set");
    const size_t n = points.positions.size();

    Vec3 lo = points.positions[0], hi = lo;
    for (const Vec3& p : points.positions) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Real diag = (hi - lo).norm();
    const Real cap = diag > 0 ? diag * Real(0.1) : Real(1);

    std::vector<Gaussian3D> out(n);
    const int basis = sh_coeff_count(sh_degree);
    for (size_t i = 0; i < n; ++i) {
        Real nn = std::numeric_limits<Real>::infinity();
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            nn = std::min(nn, (points.positions[i] - points.positions[j]).norm());
        }
        if (!std::isfinite(nn) || nn <= Real(0)) nn = diag > 0 ? diag * Real(0.05) : Real(0.1);
        const Real scale = std::clamp(nn * Real(0.7), Real(1e-4), cap);

        Gaussian3D& g = out[i];
        g.mu = points.positions[i];
        g.log_scale = Vec3::Constant(std::log(scale));
        g.rotation = Quat::Identity();
        g.opacity_logit = std::log(Real(0.1) / Real(0.9));
        g.sh.assign(basis, Vec3::Zero());
        g.sh[0] = (points.colors[i] - Vec3::Constant(Real(0.5))) /
                  Real(0.28209479177387814);
    }
    return out;
}

// ---------------------------------------------------------------------------

RenderOutput render_model(const ModelState& model, const CameraIntrinsics& intrinsics,
                          const Pose& pose, const RenderConfig& cfg, int appearance_id) {
    if (model.type == "direct") {
        const auto gaussians = model.direct.to_gaussians();
        const PreparedGaussians batch = prepare_direct(gaussians, pose);
        return render_gaussians(batch, intrinsics, pose, cfg).raster.out;
    }
    const auto anchors = model.scaffold.anchors();
    const DecoderBank bank = model.scaffold.bank();
    const int id = std::clamp(appearance_id, 0,
                              std::max(0, model.scaffold.n_images - 1));
    const DecodedAnchors dec =
        decode_anchors(anchors, bank, pose.camera_center(), id);
    return render_gaussians(dec.batch, intrinsics, pose, cfg).raster.out;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainConfig cfg, SceneDataset dataset)
    : cfg_(std::move(cfg)), data_(std::move(dataset)) {
    cfg_.validate();
    require(!data_.views.empty(), "trainer: dataset has no views");
    require(!data_.points.positions.empty(), "trainer: dataset has no points");
    for (const View& v : data_.views) v.validate();

    rng_main_.reseed(derive_seed(cfg_.seed, 0));
    rng_oracle_.reseed(derive_seed(cfg_.seed, 1));
    rng_densify_.reseed(derive_seed(cfg_.seed, 2));

    if (cfg_.model == "scaffold") {
        Rng init_rng(derive_seed(cfg_.seed, 3));
        ScaffoldInit init = init_from_points(
            data_.points, resolved_voxel_size(), cfg_.feature_dim,
            cfg_.offsets_per_anchor, cfg_.appearance_dim, cfg_.hidden_dim,
            static_cast<int>(data_.views.size()), init_rng);
        model_.type = "scaffold";
        model_.scaffold = ScaffoldModel::assemble(init.anchors, init.bank, cfg_.lr);
        stats_.resize(init.anchors.size(), cfg_.offsets_per_anchor);
    } else {
        model_.type = "direct";
        model_.direct = DirectModel::from_gaussians(
            init_direct_from_points(data_.points, cfg_.sh_degree), cfg_.lr);
    }

    metric_ = std::make_unique<MsSsimDistance>();
    oracle_ = std::make_unique<IdentityOracle>();
}

Real Trainer::resolved_voxel_size() const {
    if (cfg_.densify.voxel_size > 0) return cfg_.densify.voxel_size;
    Real base = data_.scene_scale;
    if (base <= 0) {
        Vec3 lo = data_.points.positions[0], hi = lo;
        for (const Vec3& p : data_.points.positions) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        base = (hi - lo).norm();
    }
    return base > 0 ? base / Real(128) : Real(0.01);
}

const View& Trainer::pick_view() {
    if (perm_pos_ >= permutation_.size()) {
        permutation_.resize(data_.views.size());
        std::iota(permutation_.begin(), permutation_.end(), 0u);
        for (size_t i = permutation_.size(); i > 1; --i) {
            const size_t j = rng_main_.below(i);
            std::swap(permutation_[i - 1], permutation_[j]);
        }
        perm_pos_ = 0;
    }
    return data_.views[permutation_[perm_pos_++]];
}

namespace {

void scatter_direct(DirectModel& model, std::span<const Gaussian3DGrad> grads) {
    for (size_t i = 0; i < grads.size(); ++i) {
        const Gaussian3DGrad& g = grads[i];
        for (int c = 0; c < 3; ++c) {
            model.mu.grad[3 * i + c] += g.dmu[c];
            model.log_scale.grad[3 * i + c] += g.dlog_scale[c];
        }
        for (int c = 0; c < 4; ++c) model.rotation.grad[4 * i + c] += g.drotation[c];
        model.opacity.grad[i] += g.dopacity_logit;
        for (size_t b = 0; b < g.dsh.size(); ++b)
            for (int c = 0; c < 3; ++c)
                model.sh.grad[(i * model.sh_basis + b) * 3 + c] += g.dsh[b][c];
    }
}

void scatter_scaffold(ScaffoldModel& model, const ScaffoldGrads& grads) {
    const int F = model.feature_dim, k = model.k, E = model.appearance_dim;
    for (size_t a = 0; a < grads.dx_v.size(); ++a) {
        for (int c = 0; c < 3; ++c) {
            model.positions.grad[3 * a + c] += grads.dx_v[a][c];
            model.scalings.grad[3 * a + c] += grads.dlog_lv[a][c];
        }
        for (int f = 0; f < F; ++f)
            model.features.grad[a * F + f] += grads.dfeature[a][f];
        for (int i = 0; i < k; ++i)
            for (int c = 0; c < 3; ++c)
                model.offsets.grad[(a * k + i) * 3 + c] += grads.doffsets[a][i][c];
    }
    std::span<Real> flat(model.decoders.grad);
    const size_t n0 = grads.dopacity_head.param_count();
    const size_t n1 = grads.dscale_rot_head.param_count();
    grads.dopacity_head.add_to_flat(flat.subspan(0, n0));
    grads.dscale_rot_head.add_to_flat(flat.subspan(n0, n1));
    grads.dcolor_head.add_to_flat(flat.subspan(n0 + n1));
    for (size_t img = 0; img < grads.dappearance.size(); ++img)
        for (int e = 0; e < E; ++e)
            model.embeddings.grad[img * E + e] += grads.dappearance[img][e];
}

bool any_nonzero(std::span<const Real> values) {
    for (Real v : values)
        if (v != Real(0)) return true;
    return false;
}

} // namespace

LossBreakdown Trainer::train_step(const View& view) {
    ++iteration_;
    LossBreakdown bd;
    bd.iteration = iteration_;

    const bool is_scaffold = model_.type == "scaffold";
    if (is_scaffold)
        for (ParamGroup* g : model_.scaffold.groups()) g->zero_grad();
    else
        for (ParamGroup* g : model_.direct.groups()) g->zero_grad();

    // ------------------------------------------------------------ forward
    std::vector<Gaussian3D> gaussians;
    std::vector<Anchor> anchors;
    DecoderBank bank;
    DecodedAnchors dec;
    PreparedGaussians direct_batch;

    if (is_scaffold) {
        anchors = model_.scaffold.anchors();
        bank = model_.scaffold.bank();
        dec = decode_anchors(anchors, bank, view.pose.camera_center(),
                             view.appearance_id);
    } else {
        gaussians = model_.direct.to_gaussians();
        direct_batch = prepare_direct(gaussians, view.pose);
    }
    const PreparedGaussians& batch = is_scaffold ? dec.batch : direct_batch;

    PipelineState state =
        render_gaussians(batch, view.intrinsics, view.pose, cfg_.render);
    const Image rendered = image_from_render(state.raster.out);
    const Image rendered_depth = depth_from_render(state.raster.out);
    const Image* mask = view.mask ? &*view.mask : nullptr;

    // ------------------------------------------------------------- losses
    const ScalarLoss photo =
        photometric_loss(rendered, view.image, mask, cfg_.loss.lambda_ssim);
    bd.photometric = photo.value;

    ScalarLoss depth;
    const bool has_depth = view.mono_depth.has_value();
    if (has_depth) {
        depth = depth_loss(rendered_depth, *view.mono_depth, mask);
        bd.depth = depth.value;
    }

    std::vector<uint8_t> selected(batch.size(), 0);
    for (int bi : state.batch_of_splat) selected[bi] = 1;
    bd.visible_gaussians = static_cast<int>(
        std::count(selected.begin(), selected.end(), uint8_t(1)));
    const RegularizationResult reg =
        regularization(batch.opacity, batch.log_scale, selected, cfg_.loss);
    bd.regularization = reg.value;

    // -------------------------------------------------------- augmentation
    AugmentationResult aug;
    std::vector<DecodedAnchors> aug_dec;
    std::vector<PreparedGaussians> aug_batch;
    std::vector<PipelineState> aug_state;
    const bool do_aug = cfg_.augment.enabled &&
                        (iteration_ % cfg_.augment.every_n == 0) &&
                        data_.views.size() >= 2;
    if (do_aug) {
        const RenderImageFn render_fn = [&](const AugmentedCamera& cam) {
            if (is_scaffold) {
                aug_dec.push_back(decode_anchors(
                    anchors, bank, cam.pose.camera_center(),
                    data_.views[cam.ref_view].appearance_id));
                aug_state.push_back(render_gaussians(aug_dec.back().batch,
                                                     cam.intrinsics, cam.pose,
                                                     cfg_.render));
            } else {
                aug_batch.push_back(prepare_direct(gaussians, cam.pose));
                aug_state.push_back(render_gaussians(aug_batch.back(), cam.intrinsics,
                                                     cam.pose, cfg_.render));
            }
            return image_from_render(aug_state.back().raster.out);
        };
        aug = augmentation_step(data_.views, render_fn, *oracle_, *metric_,
                                cfg_.augment, rng_oracle_);
        bd.augmented = true;
        bd.augmentation = aug.loss;
        bd.aug_active = aug.active_count;
        bd.aug_dropped = aug.dropped;
    }

    bd.total = bd.photometric + cfg_.loss.lambda_sd * bd.depth +
               cfg_.loss.lambda_gs * bd.augmentation + bd.regularization;
    bd.anchor_count = is_scaffold ? model_.scaffold.anchor_count : model_.direct.count;

    // ------------------------------------------------------------ backward
    std::vector<Real> dl_ddepth;
    if (has_depth && !depth.degenerate) {
        dl_ddepth = depth.grad.data;
        for (Real& g : dl_ddepth) g *= cfg_.loss.lambda_sd;
    }
    PreparedGrads grads = render_gaussians_backward(
        batch, view.intrinsics, view.pose, cfg_.render, state, photo.grad.data,
        dl_ddepth);
    for (size_t i = 0; i < batch.size(); ++i) {
        grads.dopacity[i] += reg.dopacity[i];
        grads.dlog_scale[i] += reg.dlog_scale[i];
    }

    if (is_scaffold) {
        // densification window statistics (training view only)
        for (size_t e = 0; e < dec.origin.size(); ++e) {
            if (grads.hit_count[e] == 0) continue;
            const auto [a, slot] = dec.origin[e];
            const size_t s = static_cast<size_t>(a) * model_.scaffold.k + slot;
            stats_.grad_norm_sum[s] += grads.abs_grad2d[e].norm();
            stats_.grad_hits[s] += 1;
        }
        for (size_t a = 0; a < dec.anchor_mean_opacity.size(); ++a) {
            stats_.opacity_sum[a] += dec.anchor_mean_opacity[a];
            stats_.opacity_count[a] += 1;
        }
        const ScaffoldGrads sg =
            decode_anchors_backward(anchors, bank, view.pose.camera_center(),
                                    view.appearance_id, dec, grads);
        scatter_scaffold(model_.scaffold, sg);
    } else {
        const auto dg = prepare_direct_backward(gaussians, view.pose, grads);
        scatter_direct(model_.direct, dg);
    }

    if (do_aug) {
        for (size_t vi = 0; vi < aug.views.size(); ++vi) {
            if (!aug.views[vi].active) continue;
            if (!any_nonzero(aug.dloss_drendered[vi].data)) continue;
            const int t = aug.views[vi].target_index;
            const AugmentedCamera& cam = aug.cameras[t];
            std::vector<Real> dl = aug.dloss_drendered[vi].data;
            for (Real& g : dl) g *= cfg_.loss.lambda_gs;

            if (is_scaffold) {
                const PreparedGrads g2 = render_gaussians_backward(
                    aug_dec[t].batch, cam.intrinsics, cam.pose, cfg_.render,
                    aug_state[t], dl, {});
                const ScaffoldGrads sg = decode_anchors_backward(
                    anchors, bank, cam.pose.camera_center(),
                    data_.views[cam.ref_view].appearance_id, aug_dec[t], g2);
                scatter_scaffold(model_.scaffold, sg);
            } else {
                const PreparedGrads g2 = render_gaussians_backward(
                    aug_batch[t], cam.intrinsics, cam.pose, cfg_.render, aug_state[t],
                    dl, {});
                const auto dg = prepare_direct_backward(gaussians, cam.pose, g2);
                scatter_direct(model_.direct, dg);
            }
        }
    }

    check_finite(bd);
    apply_optimizer();
    if (!is_scaffold) model_.direct.renormalize_rotations();

    if (is_scaffold && iteration_ >= cfg_.densify.start &&
        iteration_ <= cfg_.densify.end && iteration_ % cfg_.densify.interval == 0)
        densify_and_prune();

    return bd;
}

LossBreakdown Trainer::step() { return train_step(pick_view()); }

void Trainer::run(const std::function<void(const LossBreakdown&)>& on_step) {
    while (iteration_ < cfg_.iterations) {
        const LossBreakdown bd = step();
        if (on_step) on_step(bd);
    }
}

void Trainer::apply_optimizer() {
    const Real decay = std::pow(cfg_.position_lr_final_ratio,
                                Real(iteration_) / Real(cfg_.iterations));
    auto update = [&](ParamGroup* g) { g->adam_step(g->decayed ? decay : Real(1), adam_); };
    if (model_.type == "scaffold")
        for (ParamGroup* g : model_.scaffold.groups()) update(g);
    else
        for (ParamGroup* g : model_.direct.groups()) update(g);
}

void Trainer::check_finite(const LossBreakdown& bd) const {
    auto fail = [this](const std::string& what) {
        throw numeric_error("non-finite " + what + " at iteration " +
                            std::to_string(iteration_));
    };
    if (!std::isfinite(bd.photometric)) fail("photometric loss");
    if (!std::isfinite(bd.depth)) fail("depth loss");
    if (!std::isfinite(bd.augmentation)) fail("augmentation loss");
    if (!std::isfinite(bd.regularization)) fail("regularization loss");
    auto scan = [&](const ParamGroup* g) {
        for (Real v : g->grad)
            if (!std::isfinite(v)) fail("gradient in group '" + g->name + "'");
    };
    if (model_.type == "scaffold")
        for (const ParamGroup* g : model_.scaffold.groups()) scan(g);
    else
        for (const ParamGroup* g : model_.direct.groups()) scan(g);
}

void Trainer::densify_and_prune() {
    ScaffoldModel& m = model_.scaffold;
    const auto anchors = m.anchors();
    const Real voxel = resolved_voxel_size();

    const std::vector<Anchor> grown =
        densify_anchors(anchors, stats_, m.k, voxel, cfg_.densify.grow_threshold,
                        rng_densify_);
    const PruneResult pruned =
        prune_anchors(anchors, stats_, cfg_.densify.prune_threshold);

    m.positions.keep_rows(pruned.keep, 3);
    m.scalings.keep_rows(pruned.keep, 3);
    m.features.keep_rows(pruned.keep, m.feature_dim);
    m.offsets.keep_rows(pruned.keep, static_cast<size_t>(m.k) * 3);

    std::vector<Real> pos_rows, scal_rows, feat_rows, off_rows;
    for (const Anchor& a : grown) {
        for (int c = 0; c < 3; ++c) pos_rows.push_back(a.x_v[c]);
        for (int c = 0; c < 3; ++c) scal_rows.push_back(a.log_lv[c]);
        for (int f = 0; f < m.feature_dim; ++f) feat_rows.push_back(a.feature[f]);
        for (int i = 0; i < m.k; ++i)
            for (int c = 0; c < 3; ++c) off_rows.push_back(a.offsets[i][c]);
    }
    m.positions.append_rows(pos_rows);
    m.scalings.append_rows(scal_rows);
    m.features.append_rows(feat_rows);
    m.offsets.append_rows(off_rows);

    m.anchor_count = static_cast<int>(pruned.retained.size() + grown.size());
    stats_.resize(m.anchor_count, m.k);
}

RenderOutput Trainer::render(const CameraIntrinsics& intrinsics, const Pose& pose,
                             int appearance_id) const {
    return render_model(model_, intrinsics, pose, cfg_.render, appearance_id);
}

std::vector<Real> Trainer::parameters_flat() const {
    std::vector<Real> out;
    auto add = [&out](const ParamGroup* g) {
        out.insert(out.end(), g->value.begin(), g->value.end());
    };
    if (model_.type == "scaffold")
        for (const ParamGroup* g : model_.scaffold.groups()) add(g);
    else
        for (const ParamGroup* g : model_.direct.groups()) add(g);
    return out;
}

} // namespace gsdiff
