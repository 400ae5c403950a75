#include "gsdiff/losses.hpp"

#include "gsdiff/ssim.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace gsdiff {

void LossWeights::validate() const {
    require(lambda_ssim >= 0 && lambda_ssim <= 1, "loss weights: lambda_ssim in [0,1]");
    require(epsilon > 0 && epsilon <= 1, "loss weights: epsilon in (0,1]");
    require(lambda_gs >= 0 && lambda_sd >= 0 && lambda_opacity >= 0 &&
                lambda_scale >= 0 && lambda_aniso >= 0,
            "loss weights: weights must be >= 0");
}

namespace {

Image ones_like(const Image& img) { return Image(img.width, img.height, 1, Real(1)); }

Image masked(const Image& img, const Image& mask) {
    Image out = img;
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            const Real m = mask.at(r, c);
            for (int ch = 0; ch < img.channels; ++ch) out.at(r, c, ch) *= m;
        }
    return out;
}

size_t active_count(const Image& mask) {
    size_t n = 0;
    for (Real v : mask.data) n += v != Real(0);
    return n;
}

} // namespace

ScalarLoss photometric_loss(const Image& rendered, const Image& target,
                            const Image* mask, Real lambda_ssim) {
    require(rendered.same_shape(target), "photometric_loss: image shapes must match");
    const Image mask_img = mask ? *mask : ones_like(rendered);
    require(mask_img.width == rendered.width && mask_img.height == rendered.height &&
                mask_img.channels == 1,
            "photometric_loss: mask shape mismatch");

    ScalarLoss out;
    out.grad = Image(rendered.width, rendered.height, rendered.channels);
    const size_t n_active = active_count(mask_img);
    if (n_active == 0) {
        out.degenerate = true;
        return out;
    }

    const Image x = masked(rendered, mask_img);
    const Image y = masked(target, mask_img);
    const Real inv_norm = Real(1) / (Real(n_active) * rendered.channels);

    // L1 term
    Real l1 = 0;
    for (int r = 0; r < x.height; ++r)
        for (int c = 0; c < x.width; ++c) {
            if (mask_img.at(r, c) == Real(0)) continue;
            for (int ch = 0; ch < x.channels; ++ch) {
                const Real d = x.at(r, c, ch) - y.at(r, c, ch);
                l1 += std::abs(d);
                out.grad.at(r, c, ch) = (Real(1) - lambda_ssim) * inv_norm *
                                        (d > 0 ? Real(1) : (d < 0 ? Real(-1) : Real(0)));
            }
        }
    l1 *= inv_norm;

    // D-SSIM term
    const SsimMaps maps = ssim_map(x, y);
    Real ssim_sum = 0;
    Image dmap(x.width, x.height, x.channels);
    for (int r = 0; r < x.height; ++r)
        for (int c = 0; c < x.width; ++c) {
            const Real m = mask_img.at(r, c);
            if (m == Real(0)) continue;
            for (int ch = 0; ch < x.channels; ++ch) {
                ssim_sum += maps.map.at(r, c, ch);
                dmap.at(r, c, ch) = -lambda_ssim * inv_norm;
            }
        }
    const Real ssim_mean = ssim_sum * inv_norm;

    const Image dssim_dx = ssim_map_backward(x, y, dmap);
    for (int r = 0; r < x.height; ++r)
        for (int c = 0; c < x.width; ++c) {
            const Real m = mask_img.at(r, c);
            for (int ch = 0; ch < x.channels; ++ch)
                out.grad.at(r, c, ch) =
                    m * (out.grad.at(r, c, ch) + dssim_dx.at(r, c, ch));
        }

    out.value = lambda_ssim * (Real(1) - ssim_mean) + (Real(1) - lambda_ssim) * l1;
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct ActiveStats {
    std::vector<size_t> idx;
    Real mean_x = 0, mean_y = 0;
    Real sxx = 0, syy = 0, sxy = 0;
};

ActiveStats centered_moments(const Image& x, const Image& y, const Image& mask) {
    ActiveStats st;
    for (size_t i = 0; i < x.data.size(); ++i)
        if (mask.data[i] != Real(0)) st.idx.push_back(i);
    const Real n = Real(st.idx.size());
    if (st.idx.empty()) return st;
    for (size_t i : st.idx) {
        st.mean_x += x.data[i];
        st.mean_y += y.data[i];
    }
    st.mean_x /= n;
    st.mean_y /= n;
    for (size_t i : st.idx) {
        const Real dx = x.data[i] - st.mean_x;
        const Real dy = y.data[i] - st.mean_y;
        st.sxx += dx * dx;
        st.syy += dy * dy;
        st.sxy += dx * dy;
    }
    return st;
}

} // namespace

ScalarLoss depth_loss(const Image& rendered_depth, const Image& mono_depth,
                      const Image* mask) {
    require(rendered_depth.same_shape(mono_depth), "depth_loss: shape mismatch");
    require(rendered_depth.channels == 1, "depth_loss: depth must be single channel");
    const Image mask_img = mask ? *mask : ones_like(rendered_depth);

    ScalarLoss out;
    out.grad = Image(rendered_depth.width, rendered_depth.height, 1);

    const ActiveStats st = centered_moments(rendered_depth, mono_depth, mask_img);
    const Real n = Real(st.idx.size());
    if (st.idx.size() < 16) {
        out.degenerate = true;
        return out;
    }
    const Real scale_x = st.sxx / n, scale_y = st.syy / n;
    if (scale_x < Real(1e-18) || scale_y < Real(1e-18)) {
        out.degenerate = true;
        return out;
    }

    const Real denom = std::sqrt(st.sxx * st.syy);
    const Real r = st.sxy / denom;
    out.value = Real(1) - r;
    // d(1 - r)/dx_i = -[(y_i - my) - (x_i - mx) * sxy / sxx] / sqrt(sxx * syy)
    for (size_t i : st.idx) {
        const Real dx = rendered_depth.data[i] - st.mean_x;
        const Real dy = mono_depth.data[i] - st.mean_y;
        out.grad.data[i] = -(dy - dx * st.sxy / st.sxx) / denom;
    }
    return out;
}

ScalarLoss depth_loss_aligned_l1(const Image& rendered_depth, const Image& mono_depth,
                                 const Image* mask) {
    require(rendered_depth.same_shape(mono_depth), "depth_loss: shape mismatch");
    const Image mask_img = mask ? *mask : ones_like(rendered_depth);

    ScalarLoss out;
    out.grad = Image(rendered_depth.width, rendered_depth.height, 1);
    const ActiveStats st = centered_moments(mono_depth, rendered_depth, mask_img);
    if (st.idx.size() < 16 || st.sxx / Real(st.idx.size()) < Real(1e-18)) {
        out.degenerate = true;
        return out;
    }
    // Least-squares a, b with a * mono + b ~= rendered, then L1 on residuals.
    // The fit is treated as constant for the gradient (standard practice for
    // alignment-based depth losses).
    const Real a = st.sxy / st.sxx;
    const Real b = st.mean_y - a * st.mean_x;
    const Real inv_n = Real(1) / Real(st.idx.size());
    for (size_t i : st.idx) {
        const Real resid = rendered_depth.data[i] - (a * mono_depth.data[i] + b);
        out.value += std::abs(resid);
        out.grad.data[i] =
            inv_n * (resid > 0 ? Real(1) : (resid < 0 ? Real(-1) : Real(0)));
    }
    out.value *= inv_n;
    return out;
}

// ---------------------------------------------------------------------------

ScalarLoss MsSsimDistance::distance(const Image& a, const Image& b) const {
    require(a.same_shape(b), "ms-ssim: image shapes must match");

    // Bitwise-identical images are a perfect match by definition.
    if (a.data == b.data) {
        ScalarLoss out;
        out.grad = Image(a.width, a.height, a.channels);
        return out;
    }

    // Scales whose downsampled size drops below the SSIM window are skipped.
    int n_scales = 1;
    for (int s = 2; s <= 3; ++s) {
        const int f = 1 << (s - 1);
        if (std::min(a.width, a.height) / f >= 11) n_scales = s;
    }

    std::vector<Image> xs{a}, ys{b};
    for (int s = 1; s < n_scales; ++s) {
        xs.push_back(downsample2(xs.back()));
        ys.push_back(downsample2(ys.back()));
    }

    ScalarLoss out;
    Real acc = 0;
    std::vector<Image> scale_grads(n_scales);
    for (int s = 0; s < n_scales; ++s) {
        const SsimMaps maps = ssim_map(xs[s], ys[s]);
        acc += maps.mean;
        // d(1 - mean_scales)/dmap = -1 / (n_scales * numel)
        Image dmap(xs[s].width, xs[s].height, xs[s].channels,
                   Real(-1) / (Real(n_scales) * Real(xs[s].data.size())));
        scale_grads[s] = ssim_map_backward(xs[s], ys[s], dmap);
    }
    out.value = Real(1) - acc / Real(n_scales);

    // Chain the downsampling back to full resolution.
    Image g = scale_grads[n_scales - 1];
    for (int s = n_scales - 2; s >= 0; --s) {
        Image up = downsample2_backward(xs[s], g);
        for (size_t i = 0; i < up.data.size(); ++i)
            up.data[i] += scale_grads[s].data[i];
        g = std::move(up);
    }
    out.grad = std::move(g);
    return out;
}

// ---------------------------------------------------------------------------

uint64_t PrecomputedDistanceMetric::image_key(const Image& img) {
    uint64_t h = 14695981039346656037ull;
    auto feed = [&h](uint8_t byte) {
        h ^= byte;
        h *= 1099511628211ull;
    };
    for (Real v : img.data) {
        const int q = std::clamp(static_cast<int>(std::lround(double(v) * 255.0)), 0, 255);
        feed(static_cast<uint8_t>(q));
    }
    return h;
}

PrecomputedDistanceMetric::PrecomputedDistanceMetric(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw std::runtime_error("precomputed metric: cannot open " + json_path);
    nlohmann::json j;
    in >> j;
    for (auto it = j.begin(); it != j.end(); ++it)
        table_.emplace_back(std::stoull(it.key(), nullptr, 16),
                            static_cast<Real>(it.value().get<double>()));
    std::sort(table_.begin(), table_.end());
}

ScalarLoss PrecomputedDistanceMetric::distance(const Image& a, const Image& b) const {
    ScalarLoss out;
    out.grad = Image(a.width, a.height, a.channels);
    const uint64_t key = image_key(b);
    const auto it = std::lower_bound(
        table_.begin(), table_.end(), key,
        [](const std::pair<uint64_t, Real>& e, uint64_t k) { return e.first < k; });
    if (it == table_.end() || it->first != key)
        throw std::runtime_error("precomputed metric: no distance for image key");
    out.value = it->second;
    return out;
}

// ---------------------------------------------------------------------------

GatedLoss diffusion_loss(const Image& rendered, const Image& generated,
                         const PerceptualMetric& metric, Real epsilon) {
    require(rendered.same_shape(generated), "diffusion_loss: image shapes must match");
    const ScalarLoss d = metric.distance(rendered, generated);

    GatedLoss out;
    out.distance = d.value;
    out.active = d.value <= epsilon;
    if (out.active) {
        out.value = d.value;
        out.grad = d.grad;
    } else {
        out.value = 0;
        out.grad = Image(rendered.width, rendered.height, rendered.channels);
    }
    return out;
}

// ---------------------------------------------------------------------------

RegularizationResult regularization(std::span<const Real> opacity,
                                    std::span<const Vec3> log_scale,
                                    std::span<const uint8_t> selected,
                                    const LossWeights& w) {
    require(opacity.size() == log_scale.size(), "regularization: size mismatch");
    RegularizationResult out;
    out.dopacity.assign(opacity.size(), Real(0));
    out.dlog_scale.assign(opacity.size(), Vec3::Zero());

    size_t n = 0;
    for (size_t i = 0; i < opacity.size(); ++i)
        if (selected.empty() || selected[i]) ++n;
    if (n == 0) return out;
    const Real inv_n = Real(1) / Real(n);

    for (size_t i = 0; i < opacity.size(); ++i) {
        if (!selected.empty() && !selected[i]) continue;
        out.value += w.lambda_opacity * opacity[i] * inv_n;
        out.dopacity[i] += w.lambda_opacity * inv_n;

        const Vec3 s = log_scale[i].array().exp();
        out.value += w.lambda_scale * s.sum() * inv_n;
        out.dlog_scale[i] += w.lambda_scale * inv_n * s;

        int max_i = 0, min_i = 0;
        for (int c = 1; c < 3; ++c) {
            if (log_scale[i][c] > log_scale[i][max_i]) max_i = c;
            if (log_scale[i][c] < log_scale[i][min_i]) min_i = c;
        }
        const Real ratio = std::exp(log_scale[i][max_i] - log_scale[i][min_i]);
        if (ratio > w.aniso_max_ratio) {
            out.value += w.lambda_aniso * (ratio - w.aniso_max_ratio) * inv_n;
            out.dlog_scale[i][max_i] += w.lambda_aniso * inv_n * ratio;
            out.dlog_scale[i][min_i] -= w.lambda_aniso * inv_n * ratio;
        }
    }
    return out;
}

} // namespace gsdiff
