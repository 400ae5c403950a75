#include "gsdiff/ssim.hpp"

#include <array>
#include <cmath>

namespace gsdiff {

namespace {

constexpr int kWindow = 11;
constexpr int kHalf = kWindow / 2;
constexpr Real kC1 = Real(0.01) * Real(0.01);
constexpr Real kC2 = Real(0.03) * Real(0.03);

const std::array<Real, kWindow>& gaussian_window() {
    static const std::array<Real, kWindow> w = [] {
        std::array<Real, kWindow> out{};
        Real sum = 0;
        for (int i = 0; i < kWindow; ++i) {
            const Real d = Real(i - kHalf);
            out[i] = std::exp(-d * d / (2 * Real(1.5) * Real(1.5)));
            sum += out[i];
        }
        for (auto& v : out) v /= sum;
        return out;
    }();
    return w;
}

/// Separable zero-padded same-size convolution, per channel.
Image conv_window(const Image& img) {
    const auto& w = gaussian_window();
    Image tmp(img.width, img.height, img.channels);
    Image out(img.width, img.height, img.channels);
    // rows
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            for (int ch = 0; ch < img.channels; ++ch) {
                Real acc = 0;
                const int k0 = std::max(-kHalf, -c);
                const int k1 = std::min(kHalf, img.width - 1 - c);
                for (int k = k0; k <= k1; ++k)
                    acc += w[k + kHalf] * img.at(r, c + k, ch);
                tmp.at(r, c, ch) = acc;
            }
    // columns
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            for (int ch = 0; ch < img.channels; ++ch) {
                Real acc = 0;
                const int k0 = std::max(-kHalf, -r);
                const int k1 = std::min(kHalf, img.height - 1 - r);
                for (int k = k0; k <= k1; ++k)
                    acc += w[k + kHalf] * tmp.at(r + k, c, ch);
                out.at(r, c, ch) = acc;
            }
    return out;
}

Image hadamard(const Image& a, const Image& b) {
    Image out(a.width, a.height, a.channels);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

} // namespace

SsimMaps ssim_map(const Image& x, const Image& y) {
    require(x.same_shape(y), "ssim: image shapes must match");
    const Image mu_x = conv_window(x);
    const Image mu_y = conv_window(y);
    const Image sxx = conv_window(hadamard(x, x));
    const Image syy = conv_window(hadamard(y, y));
    const Image sxy = conv_window(hadamard(x, y));

    SsimMaps res;
    res.map = Image(x.width, x.height, x.channels);
    Real sum = 0;
    for (size_t i = 0; i < x.data.size(); ++i) {
        const Real mx = mu_x.data[i], my = mu_y.data[i];
        const Real vx = sxx.data[i] - mx * mx;
        const Real vy = syy.data[i] - my * my;
        const Real cxy = sxy.data[i] - mx * my;
        const Real n1 = 2 * mx * my + kC1;
        const Real d1 = mx * mx + my * my + kC1;
        const Real n2 = 2 * cxy + kC2;
        const Real d2 = vx + vy + kC2;
        const Real v = (n1 * n2) / (d1 * d2);
        res.map.data[i] = v;
        sum += v;
    }
    res.mean = sum / Real(x.data.size());
    return res;
}

Image ssim_map_backward(const Image& x, const Image& y, const Image& dmap) {
    require(x.same_shape(y) && x.same_shape(dmap), "ssim backward: shape mismatch");
    const Image mu_x = conv_window(x);
    const Image mu_y = conv_window(y);
    const Image sxx = conv_window(hadamard(x, x));
    const Image syy = conv_window(hadamard(y, y));
    const Image sxy = conv_window(hadamard(x, y));

    // Per-pixel gradients w.r.t. mu_x, Sxx and Sxy; the moment convolutions
    // transpose onto themselves (symmetric window, zero padding).
    Image u_mu(x.width, x.height, x.channels);
    Image u_sxx(x.width, x.height, x.channels);
    Image u_sxy(x.width, x.height, x.channels);
    for (size_t i = 0; i < x.data.size(); ++i) {
        const Real mx = mu_x.data[i], my = mu_y.data[i];
        const Real vx = sxx.data[i] - mx * mx;
        const Real vy = syy.data[i] - my * my;
        const Real cxy = sxy.data[i] - mx * my;
        const Real n1 = 2 * mx * my + kC1;
        const Real d1 = mx * mx + my * my + kC1;
        const Real n2 = 2 * cxy + kC2;
        const Real d2 = vx + vy + kC2;
        const Real v = (n1 * n2) / (d1 * d2);

        const Real p_n1 = n2 / (d1 * d2);
        const Real p_d1 = -v / d1;
        const Real p_n2 = n1 / (d1 * d2);
        const Real p_d2 = -v / d2;

        const Real g = dmap.data[i];
        // mu_x appears in n1, d1 and (through the centered moments) n2, d2.
        u_mu.data[i] = g * (p_n1 * 2 * my + p_d1 * 2 * mx + p_n2 * (-2 * my) +
                            p_d2 * (-2 * mx));
        u_sxx.data[i] = g * p_d2;
        u_sxy.data[i] = g * 2 * p_n2;
    }

    const Image c_mu = conv_window(u_mu);
    const Image c_sxx = conv_window(u_sxx);
    const Image c_sxy = conv_window(u_sxy);
    Image dx(x.width, x.height, x.channels);
    for (size_t i = 0; i < x.data.size(); ++i)
        dx.data[i] = c_mu.data[i] + 2 * x.data[i] * c_sxx.data[i] +
                     y.data[i] * c_sxy.data[i];
    return dx;
}

Image downsample2(const Image& img) {
    const int w = img.width / 2, h = img.height / 2;
    Image out(w, h, img.channels);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < img.channels; ++ch)
                out.at(r, c, ch) =
                    (img.at(2 * r, 2 * c, ch) + img.at(2 * r, 2 * c + 1, ch) +
                     img.at(2 * r + 1, 2 * c, ch) + img.at(2 * r + 1, 2 * c + 1, ch)) /
                    Real(4);
    return out;
}

Image downsample2_backward(const Image& fine_shape_ref, const Image& dcoarse) {
    Image out(fine_shape_ref.width, fine_shape_ref.height, fine_shape_ref.channels);
    for (int r = 0; r < dcoarse.height; ++r)
        for (int c = 0; c < dcoarse.width; ++c)
            for (int ch = 0; ch < dcoarse.channels; ++ch) {
                const Real g = dcoarse.at(r, c, ch) / Real(4);
                out.at(2 * r, 2 * c, ch) += g;
                out.at(2 * r, 2 * c + 1, ch) += g;
                out.at(2 * r + 1, 2 * c, ch) += g;
                out.at(2 * r + 1, 2 * c + 1, ch) += g;
            }
    return out;
}

} // namespace gsdiff
