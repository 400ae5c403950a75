#include "gsdiff/scaffold.hpp"

#include <cmath>
#include <set>

namespace gsdiff {

namespace {
Real sigmoid(Real x) { return Real(1) / (Real(1) + std::exp(-x)); }
} // namespace

// ---------------------------------------------------------------------------
// Mlp

VecX Mlp::forward(const VecX& z, VecX* h1_out, VecX* h2_out, Real* relu_margin) const {
    const VecX a1 = w1 * z + b1;
    VecX h1 = a1.cwiseMax(Real(0));
    const VecX a2 = w2 * h1 + b2;
    VecX h2 = a2.cwiseMax(Real(0));
    VecX out = w3 * h2 + b3;
    if (relu_margin) {
        for (Eigen::Index i = 0; i < a1.size(); ++i)
            *relu_margin = std::min(*relu_margin, std::abs(a1[i]));
        for (Eigen::Index i = 0; i < a2.size(); ++i)
            *relu_margin = std::min(*relu_margin, std::abs(a2[i]));
    }
    if (h1_out) *h1_out = std::move(h1);
    if (h2_out) *h2_out = std::move(h2);
    return out;
}

VecX Mlp::backward(const VecX& z, const VecX& h1, const VecX& h2, const VecX& dout,
                   Mlp& grad) const {
    grad.w3 += dout * h2.transpose();
    grad.b3 += dout;
    VecX dh2 = w3.transpose() * dout;
    for (int i = 0; i < dh2.size(); ++i)
        if (h2[i] <= Real(0)) dh2[i] = 0;
    grad.w2 += dh2 * h1.transpose();
    grad.b2 += dh2;
    VecX dh1 = w2.transpose() * dh2;
    for (int i = 0; i < dh1.size(); ++i)
        if (h1[i] <= Real(0)) dh1[i] = 0;
    grad.w1 += dh1 * z.transpose();
    grad.b1 += dh1;
    return w1.transpose() * dh1;
}

Mlp Mlp::create(int in, int hidden, int out) {
    Mlp m;
    m.w1.setZero(hidden, in);
    m.b1.setZero(hidden);
    m.w2.setZero(hidden, hidden);
    m.b2.setZero(hidden);
    m.w3.setZero(out, hidden);
    m.b3.setZero(out);
    return m;
}

Mlp Mlp::init(int in, int hidden, int out, Rng& rng) {
    Mlp m = create(in, hidden, out);
    auto fill = [&rng](auto& w) {
        const Real lim = Real(1) / std::sqrt(Real(w.cols()));
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-lim, lim);
    };
    fill(m.w1);
    fill(m.w2);
    fill(m.w3);
    return m;
}

void Mlp::set_zero() {
    w1.setZero();
    w2.setZero();
    w3.setZero();
    b1.setZero();
    b2.setZero();
    b3.setZero();
}

size_t Mlp::param_count() const {
    return static_cast<size_t>(w1.size() + b1.size() + w2.size() + b2.size() +
                               w3.size() + b3.size());
}

namespace {
template <class M, class F>
void for_each_param(M&& mlp, F&& fn) {
    for (Eigen::Index r = 0; r < mlp.w1.rows(); ++r)
        for (Eigen::Index c = 0; c < mlp.w1.cols(); ++c) fn(mlp.w1(r, c));
    for (Eigen::Index i = 0; i < mlp.b1.size(); ++i) fn(mlp.b1[i]);
    for (Eigen::Index r = 0; r < mlp.w2.rows(); ++r)
        for (Eigen::Index c = 0; c < mlp.w2.cols(); ++c) fn(mlp.w2(r, c));
    for (Eigen::Index i = 0; i < mlp.b2.size(); ++i) fn(mlp.b2[i]);
    for (Eigen::Index r = 0; r < mlp.w3.rows(); ++r)
        for (Eigen::Index c = 0; c < mlp.w3.cols(); ++c) fn(mlp.w3(r, c));
    for (Eigen::Index i = 0; i < mlp.b3.size(); ++i) fn(mlp.b3[i]);
}
} // namespace

void Mlp::to_flat(std::span<Real> out) const {
    size_t i = 0;
    for_each_param(*this, [&](const Real& v) { out[i++] = v; });
}

void Mlp::from_flat(std::span<const Real> in) {
    size_t i = 0;
    for_each_param(*this, [&](Real& v) { v = in[i++]; });
}

void Mlp::add_to_flat(std::span<Real> out) const {
    size_t i = 0;
    for_each_param(*this, [&](const Real& v) { out[i++] += v; });
}

// ---------------------------------------------------------------------------
// DecoderBank

DecoderBank DecoderBank::init(int feature_dim, int k, int appearance_dim, int hidden,
                              int n_images, Rng& rng) {
    DecoderBank bank;
    bank.feature_dim = feature_dim;
    bank.k = k;
    bank.appearance_dim = appearance_dim;
    bank.hidden = hidden;
    const int in = feature_dim + 4;
    bank.opacity_head = Mlp::init(in, hidden, k, rng);
    bank.scale_rot_head = Mlp::init(in, hidden, 7 * k, rng);
    bank.color_head = Mlp::init(in + appearance_dim, hidden, 3 * k, rng);
    bank.appearance_table.assign(n_images, VecX::Zero(appearance_dim));
    return bank;
}

// ---------------------------------------------------------------------------
// Decoding

namespace {

struct AnchorDecode {
    DecodedAnchors::Cache cache;
    std::vector<NeuralGaussian> slots;
    Real mean_positive = 0;
};

AnchorDecode decode_one(const Anchor& anchor, const DecoderBank& bank,
                        const Vec3& camera_center, int appearance_id,
                        RenderDiagnostics* diag) {
    require(appearance_id >= 0 &&
                appearance_id < static_cast<int>(bank.appearance_table.size()),
            "decode: appearance_id out of range");
    require(static_cast<int>(anchor.offsets.size()) == bank.k,
            "decode: anchor offset count does not match decoder k");

    AnchorDecode out;
    auto& c = out.cache;

    const Vec3 delta = anchor.x_v - camera_center;
    c.dist = delta.norm();
    c.dir = c.dist > Real(1e-12) ? Vec3(delta / c.dist) : Vec3(0, 0, 1);

    const int F = bank.feature_dim;
    c.z.resize(F + 4);
    c.z.head(F) = anchor.feature;
    c.z[F] = c.dist;
    c.z.segment(F + 1, 3) = c.dir;

    Real* relu_margin = diag ? &diag->relu_margin : nullptr;
    c.opa_out = bank.opacity_head.forward(c.z, &c.h1o, &c.h2o, relu_margin);
    c.sr_out = bank.scale_rot_head.forward(c.z, &c.h1s, &c.h2s, relu_margin);

    c.zc.resize(F + 4 + bank.appearance_dim);
    c.zc.head(F + 4) = c.z;
    c.zc.tail(bank.appearance_dim) = bank.appearance_table[appearance_id];
    c.col_out = bank.color_head.forward(c.zc, &c.h1c, &c.h2c, relu_margin);

    const Vec3 l_v = anchor.log_lv.array().exp();
    out.slots.resize(bank.k);
    Real positive_sum = 0;
    for (int i = 0; i < bank.k; ++i) {
        NeuralGaussian& g = out.slots[i];
        g.opacity = std::tanh(c.opa_out[i]);
        g.visible = g.opacity > Real(0);
        positive_sum += std::max(g.opacity, Real(0));
        if (diag)
            diag->opacity_gate_margin =
                std::min(diag->opacity_gate_margin, std::abs(g.opacity));

        g.mu = anchor.x_v + anchor.offsets[i].cwiseProduct(l_v);
        g.log_scale = Vec3(c.sr_out.segment(7 * i, 3)) + anchor.log_lv;
        // Raw quaternion offset from identity keeps the norm away from zero.
        g.rotation = Quat(c.sr_out[7 * i + 3] + Real(1), c.sr_out[7 * i + 4],
                          c.sr_out[7 * i + 5], c.sr_out[7 * i + 6]);
        for (int ch = 0; ch < 3; ++ch)
            g.rgb[ch] = sigmoid(c.col_out[3 * i + ch]);
    }
    out.mean_positive = positive_sum / Real(bank.k);
    return out;
}

} // namespace

std::vector<NeuralGaussian> decode_neural_gaussians(const Anchor& anchor,
                                                    const DecoderBank& decoders,
                                                    const Vec3& camera_center,
                                                    int appearance_id) {
    return decode_one(anchor, decoders, camera_center, appearance_id, nullptr).slots;
}

DecodedAnchors decode_anchors(std::span<const Anchor> anchors, const DecoderBank& bank,
                              const Vec3& camera_center, int appearance_id,
                              RenderDiagnostics* diag) {
    DecodedAnchors out;
    out.cache.reserve(anchors.size());
    out.anchor_mean_opacity.reserve(anchors.size());

    for (size_t a = 0; a < anchors.size(); ++a) {
        AnchorDecode dec =
            decode_one(anchors[a], bank, camera_center, appearance_id, diag);
        for (int i = 0; i < bank.k; ++i) {
            const NeuralGaussian& g = dec.slots[i];
            if (!g.visible) continue;
            out.batch.mu.push_back(g.mu);
            out.batch.log_scale.push_back(g.log_scale);
            out.batch.rotation.push_back(
                Vec4(g.rotation.w(), g.rotation.x(), g.rotation.y(), g.rotation.z()));
            out.batch.opacity.push_back(g.opacity);
            out.batch.rgb.push_back(g.rgb);
            out.origin.emplace_back(static_cast<int>(a), i);
        }
        out.anchor_mean_opacity.push_back(dec.mean_positive);
        out.cache.push_back(std::move(dec.cache));
    }
    return out;
}

ScaffoldGrads decode_anchors_backward(std::span<const Anchor> anchors,
                                      const DecoderBank& bank,
                                      const Vec3& camera_center, int appearance_id,
                                      const DecodedAnchors& decoded,
                                      const PreparedGrads& grads) {
    (void)camera_center;
    const int F = bank.feature_dim;
    const int k = bank.k;

    ScaffoldGrads out;
    out.dx_v.assign(anchors.size(), Vec3::Zero());
    out.dfeature.assign(anchors.size(), VecX::Zero(F));
    out.doffsets.assign(anchors.size(), std::vector<Vec3>(k, Vec3::Zero()));
    out.dlog_lv.assign(anchors.size(), Vec3::Zero());
    out.dopacity_head = Mlp::create(F + 4, bank.hidden, k);
    out.dscale_rot_head = Mlp::create(F + 4, bank.hidden, 7 * k);
    out.dcolor_head = Mlp::create(F + 4 + bank.appearance_dim, bank.hidden, 3 * k);
    out.dappearance.assign(bank.appearance_table.size(),
                           VecX::Zero(bank.appearance_dim));

    // Batch entries are anchor-major; walk the runs.
    size_t e = 0;
    for (size_t a = 0; a < anchors.size(); ++a) {
        if (e >= decoded.origin.size() ||
            decoded.origin[e].first != static_cast<int>(a))
            continue;

        const auto& c = decoded.cache[a];
        const Vec3 l_v = anchors[a].log_lv.array().exp();
        VecX dopa_out = VecX::Zero(k);
        VecX dsr_out = VecX::Zero(7 * k);
        VecX dcol_out = VecX::Zero(3 * k);

        for (; e < decoded.origin.size() &&
               decoded.origin[e].first == static_cast<int>(a);
             ++e) {
            const int i = decoded.origin[e].second;

            const Vec3 dmu = grads.dmu[e];
            out.dx_v[a] += dmu;
            out.doffsets[a][i] += dmu.cwiseProduct(l_v);
            out.dlog_lv[a] +=
                dmu.cwiseProduct(anchors[a].offsets[i]).cwiseProduct(l_v);

            const Vec3 dls = grads.dlog_scale[e];
            out.dlog_lv[a] += dls;
            dsr_out.segment(7 * i, 3) += dls;

            dsr_out.segment(7 * i + 3, 4) += grads.drotation[e];

            const Real o = std::tanh(c.opa_out[i]);
            dopa_out[i] += grads.dopacity[e] * (Real(1) - o * o);

            for (int ch = 0; ch < 3; ++ch) {
                const Real v = sigmoid(c.col_out[3 * i + ch]);
                dcol_out[3 * i + ch] += grads.drgb[e][ch] * v * (Real(1) - v);
            }
        }

        VecX dz = bank.opacity_head.backward(c.z, c.h1o, c.h2o, dopa_out,
                                             out.dopacity_head);
        dz += bank.scale_rot_head.backward(c.z, c.h1s, c.h2s, dsr_out,
                                           out.dscale_rot_head);
        const VecX dzc =
            bank.color_head.backward(c.zc, c.h1c, c.h2c, dcol_out, out.dcolor_head);
        dz += dzc.head(F + 4);
        out.dappearance[appearance_id] += dzc.tail(bank.appearance_dim);

        out.dfeature[a] += dz.head(F);
        const Real ddist = dz[F];
        const Vec3 ddir = dz.segment(F + 1, 3);
        out.dx_v[a] += c.dir * ddist;
        if (c.dist > Real(1e-12))
            out.dx_v[a] += (ddir - c.dir * c.dir.dot(ddir)) / c.dist;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Densify / prune

void AnchorStats::resize(size_t n_anchors, int k) {
    grad_norm_sum.assign(n_anchors * k, Real(0));
    grad_hits.assign(n_anchors * k, 0);
    opacity_sum.assign(n_anchors, Real(0));
    opacity_count.assign(n_anchors, 0);
}

void AnchorStats::reset() {
    std::fill(grad_norm_sum.begin(), grad_norm_sum.end(), Real(0));
    std::fill(grad_hits.begin(), grad_hits.end(), 0);
    std::fill(opacity_sum.begin(), opacity_sum.end(), Real(0));
    std::fill(opacity_count.begin(), opacity_count.end(), 0);
}

std::array<int64_t, 3> voxel_key(const Vec3& p, Real voxel_size) {
    return {static_cast<int64_t>(std::floor(p.x() / voxel_size)),
            static_cast<int64_t>(std::floor(p.y() / voxel_size)),
            static_cast<int64_t>(std::floor(p.z() / voxel_size))};
}

Vec3 voxel_center(const std::array<int64_t, 3>& key, Real voxel_size) {
    return Vec3((Real(key[0]) + Real(0.5)) * voxel_size,
                (Real(key[1]) + Real(0.5)) * voxel_size,
                (Real(key[2]) + Real(0.5)) * voxel_size);
}

std::vector<Anchor> densify_anchors(std::span<const Anchor> anchors,
                                    const AnchorStats& stats, int k, Real voxel_size,
                                    Real grow_threshold, Rng& rng) {
    require(voxel_size > 0, "densify: voxel size must be positive");
    require(stats.grad_norm_sum.size() == anchors.size() * static_cast<size_t>(k),
            "densify: stats size mismatch");

    std::set<std::array<int64_t, 3>> occupied;
    for (const Anchor& a : anchors) occupied.insert(voxel_key(a.x_v, voxel_size));

    std::vector<Anchor> grown;
    for (size_t a = 0; a < anchors.size(); ++a) {
        const Vec3 l_v = anchors[a].log_lv.array().exp();
        for (int i = 0; i < k; ++i) {
            const size_t s = a * k + i;
            if (stats.grad_hits[s] == 0) continue;
            if (stats.grad_norm_sum[s] / Real(stats.grad_hits[s]) <= grow_threshold)
                continue;
            const Vec3 pos = anchors[a].x_v + anchors[a].offsets[i].cwiseProduct(l_v);
            const auto key = voxel_key(pos, voxel_size);
            if (occupied.count(key)) continue;
            occupied.insert(key);

            Anchor fresh;
            fresh.x_v = voxel_center(key, voxel_size);
            fresh.feature = anchors[a].feature;
            fresh.offsets.resize(k);
            for (auto& o : fresh.offsets)
                o = Vec3(rng.normal(), rng.normal(), rng.normal()) * Real(0.01);
            fresh.log_lv = Vec3::Constant(std::log(voxel_size));
            grown.push_back(std::move(fresh));
        }
    }
    return grown;
}

PruneResult prune_anchors(std::span<const Anchor> anchors, const AnchorStats& stats,
                          Real prune_threshold) {
    require(stats.opacity_sum.size() == anchors.size(), "prune: stats size mismatch");
    PruneResult out;
    out.keep.resize(anchors.size(), 1);
    for (size_t a = 0; a < anchors.size(); ++a) {
        if (stats.opacity_count[a] == 0) continue; // no evidence, keep
        const Real mean = stats.opacity_sum[a] / Real(stats.opacity_count[a]);
        if (mean < prune_threshold) out.keep[a] = 0;
    }
    for (size_t a = 0; a < anchors.size(); ++a)
        if (out.keep[a]) out.retained.push_back(anchors[a]);
    return out;
}

} // namespace gsdiff
