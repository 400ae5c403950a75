#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gsdiff/rasterizer.hpp"
#include "gsdiff/random.hpp"
#include "test_support.hpp"

#include <cmath>

using namespace gsdiff;

namespace {

Splat2D splat_at(Real x, Real y, Real opacity, const Vec3& color, Real depth,
                 Real sigma2 = 4) {
    Splat2D s;
    s.mean2d = Vec2(x, y);
    s.cov2d = sigma2 * Mat2::Identity();
    s.depth = depth;
    s.opacity = opacity;
    s.color = color;
    return s;
}

/// Independent scalar evaluation of the blend at one pixel: alpha_i from the
/// gaussian falloff, then C = sum c_i a_i prod_{j<i} (1 - a_j) + bg * T.
Vec3 reference_blend(std::span<const Splat2D> splats, const Vec2& pixel,
                     const Vec3& background) {
    std::vector<size_t> order(splats.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
        return a < b;
    });
    Vec3 color = Vec3::Zero();
    Real T = 1;
    for (size_t idx : order) {
        const Splat2D& s = splats[idx];
        const Vec2 d = pixel - s.mean2d;
        const Real alpha = s.opacity * std::exp(Real(-0.5) * d.dot(s.cov2d.inverse() * d));
        color += s.color * alpha * T;
        T *= 1 - alpha;
    }
    return color + background * T;
}

} // namespace

TEST_CASE("rasterize_forward: empty scene renders the background") {
    const Vec3 bg(Real(0.2), Real(0.4), Real(0.6));
    const auto res = rasterize_forward({}, 8, 8, bg, Real(0.1));
    for (int p = 0; p < 64; ++p) {
        CHECK(res.out.color[p * 3 + 0] == bg.x());
        CHECK(res.out.final_transmittance[p] == Real(1));
        CHECK(res.out.contrib_count[p] == 0);
        CHECK(res.out.depth[p] == Real(0));
    }
}

TEST_CASE("rasterize_forward: single near-opaque splat at a pixel center") {
    // alpha at the center equals the raw opacity
    const Splat2D s = splat_at(Real(8.5), Real(8.5), Real(0.99), Vec3(1, 0, 0), 2);
    const auto res = rasterize_forward(std::vector<Splat2D>{s}, 16, 16, Vec3::Zero(),
                                       Real(0.1));
    const size_t pix = 8 * 16 + 8;
    CHECK(res.out.color[pix * 3 + 0] ==
          doctest::Approx(0.99).epsilon(gsdiff::testing::kValueEps));
    CHECK(res.out.color[pix * 3 + 1] == doctest::Approx(0.0));
    CHECK(res.out.depth[pix] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(res.out.contrib_count[pix] == 1);
}

TEST_CASE("rasterize_forward: two co-located half-opacity splats") {
    const Splat2D front = splat_at(Real(8.5), Real(8.5), Real(0.5), Vec3(1, 0, 0), 1);
    const Splat2D back = splat_at(Real(8.5), Real(8.5), Real(0.5), Vec3(0, 0, 1), 2);
    const auto res = rasterize_forward(std::vector<Splat2D>{back, front}, 16, 16,
                                       Vec3::Zero(), Real(0.1));
    const size_t pix = 8 * 16 + 8;
    CHECK(res.out.color[pix * 3 + 0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(res.out.color[pix * 3 + 2] == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(res.out.final_transmittance[pix] == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("rasterize_forward matches the scalar blend oracle (randomized)") {
    Rng rng(11);
    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(5));
        std::vector<Splat2D> splats;
        for (int i = 0; i < n; ++i) {
            // alpha at the probed pixel stays inside (1/255, 0.6]: no cut,
            // no clamp, and T_min = 0.4^5 > 1e-4 keeps termination away.
            splats.push_back(splat_at(Real(7.5) + rng.uniform(Real(-1.5), Real(1.5)),
                                      Real(7.5) + rng.uniform(Real(-1.5), Real(1.5)),
                                      rng.uniform(Real(0.1), Real(0.6)),
                                      Vec3(rng.uniform(), rng.uniform(), rng.uniform()),
                                      rng.uniform(Real(1), Real(9)),
                                      rng.uniform(Real(3), Real(8))));
        }
        const Vec3 bg(rng.uniform(), rng.uniform(), rng.uniform());
        const auto res = rasterize_forward(splats, 16, 16, bg, Real(0.1));
        const Vec2 pixel(Real(7.5), Real(7.5));
        const Vec3 expected = reference_blend(splats, pixel, bg);
        const size_t pix = 7 * 16 + 7;
        for (int c = 0; c < 3; ++c)
            CHECK(std::abs(res.out.color[pix * 3 + c] - expected[c]) < 1e-6);
        ++checked;
    }
    CHECK(checked == 1000);
}

TEST_CASE("rasterize_forward: background identity is exact") {
    Rng rng(12);
    std::vector<Splat2D> splats;
    for (int i = 0; i < 30; ++i)
        splats.push_back(splat_at(rng.uniform(Real(0), Real(16)),
                                  rng.uniform(Real(0), Real(16)),
                                  rng.uniform(Real(0.1), Real(0.9)),
                                  Vec3(rng.uniform(), rng.uniform(), rng.uniform()),
                                  rng.uniform(Real(1), Real(5))));
    const Vec3 bg(Real(0.3), Real(0.7), Real(0.9));
    const auto with_bg = rasterize_forward(splats, 16, 16, bg, Real(0.1));
    const auto no_bg = rasterize_forward(splats, 16, 16, Vec3::Zero(), Real(0.1));
    for (size_t p = 0; p < 256; ++p)
        for (int c = 0; c < 3; ++c)
            CHECK(with_bg.out.color[p * 3 + c] ==
                  no_bg.out.color[p * 3 + c] +
                      bg[c] * no_bg.out.final_transmittance[p]);
}

TEST_CASE("rasterize_forward: transmittance product invariant") {
    Rng rng(13);
    std::vector<Splat2D> splats;
    for (int i = 0; i < 40; ++i)
        splats.push_back(splat_at(rng.uniform(Real(0), Real(16)),
                                  rng.uniform(Real(0), Real(16)),
                                  rng.uniform(Real(0.05), Real(0.95)),
                                  Vec3(rng.uniform(), rng.uniform(), rng.uniform()),
                                  rng.uniform(Real(1), Real(5))));
    const auto res = rasterize_forward(splats, 16, 16, Vec3::Zero(), Real(0.1));
    // Recompute the product over recorded contributors per pixel.
    for (int row = 0; row < 16; ++row)
        for (int col = 0; col < 16; ++col) {
            const size_t pix = row * 16 + col;
            Real T = 1;
            for (uint32_t k = res.record.offsets[pix]; k < res.record.offsets[pix + 1];
                 ++k) {
                const Splat2D& s = splats[res.record.contributors[k]];
                const Vec2 d =
                    Vec2(col + Real(0.5), row + Real(0.5)) - s.mean2d;
                const Real alpha = std::min(
                    s.opacity * std::exp(Real(-0.5) * d.dot(s.cov2d.inverse() * d)),
                    kAlphaClamp);
                T *= 1 - alpha;
            }
            CHECK(res.out.final_transmittance[pix] == doctest::Approx(T).epsilon(1e-5));
        }
    // all splat colors and the background are <= 1, so output channels are too
    for (Real v : res.out.color) CHECK(v <= Real(1) + 1e-6);
}

TEST_CASE("rasterize_forward: opaque singleton depth is exact; T floor bounds tail error") {
    // Depth of a single opaque splat.
    const Splat2D s = splat_at(Real(5.5), Real(5.5), Real(0.99), Vec3(1, 1, 1), Real(4.2));
    const auto res = rasterize_forward(std::vector<Splat2D>{s}, 16, 16, Vec3::Zero(),
                                       Real(0.1));
    CHECK(res.out.depth[5 * 16 + 5] ==
          doctest::Approx(4.2).epsilon(gsdiff::testing::kValueEps));

    // Early termination vs exhaustive blending: stack many opaque splats.
    Rng rng(14);
    std::vector<Splat2D> stack;
    for (int i = 0; i < 60; ++i)
        stack.push_back(splat_at(Real(8.5), Real(8.5), Real(0.5),
                                 Vec3(rng.uniform(), rng.uniform(), rng.uniform()),
                                 Real(1) + Real(i)));
    const auto truncated = rasterize_forward(stack, 16, 16, Vec3::Zero(), Real(0.1));
    const Vec3 exhaustive = reference_blend(stack, Vec2(Real(8.5), Real(8.5)),
                                            Vec3::Zero());
    const size_t pix = 8 * 16 + 8;
    for (int c = 0; c < 3; ++c)
        CHECK(std::abs(truncated.out.color[pix * 3 + c] - exhaustive[c]) < 1e-3);
}

TEST_CASE("rasterize is bit-identical across thread counts") {
    Rng rng(15);
    std::vector<Splat2D> splats;
    for (int i = 0; i < 120; ++i)
        splats.push_back(splat_at(rng.uniform(Real(0), Real(48)),
                                  rng.uniform(Real(0), Real(48)),
                                  rng.uniform(Real(0.05), Real(0.95)),
                                  Vec3(rng.uniform(), rng.uniform(), rng.uniform()),
                                  rng.uniform(Real(1), Real(6)),
                                  rng.uniform(Real(2), Real(12))));
    std::vector<Real> dcolor(48 * 48 * 3);
    std::vector<Real> ddepth(48 * 48);
    for (Real& v : dcolor) v = rng.normal();
    for (Real& v : ddepth) v = rng.normal();

    const auto fwd1 = rasterize_forward(splats, 48, 48, Vec3(Real(0.1), 0, 0), Real(0.1), 1);
    const auto fwd4 = rasterize_forward(splats, 48, 48, Vec3(Real(0.1), 0, 0), Real(0.1), 4);
    CHECK(fwd1.out.color == fwd4.out.color);
    CHECK(fwd1.out.depth == fwd4.out.depth);
    CHECK(fwd1.out.final_transmittance == fwd4.out.final_transmittance);
    CHECK(fwd1.record.contributors == fwd4.record.contributors);

    const auto b1 = rasterize_backward(splats, fwd1.record, dcolor, ddepth, 1);
    const auto b4 = rasterize_backward(splats, fwd4.record, dcolor, ddepth, 4);
    for (size_t i = 0; i < splats.size(); ++i) {
        CHECK(b1.grads.dmean2d[i] == b4.grads.dmean2d[i]);
        CHECK(b1.grads.dcov2d[i] == b4.grads.dcov2d[i]);
        CHECK(b1.grads.dopacity[i] == b4.grads.dopacity[i]);
        CHECK(b1.grads.dcolor[i] == b4.grads.dcolor[i]);
        CHECK(b1.grads.ddepth[i] == b4.grads.ddepth[i]);
        CHECK(b1.stats.abs_grad2d[i] == b4.stats.abs_grad2d[i]);
    }
}

// ---------------------------------------------------------------------------

TEST_CASE("rasterize_backward: zero cotangent gives zero gradients") {
    const Splat2D s = splat_at(Real(8.5), Real(8.5), Real(0.6), Vec3(1, 0, 0), 2);
    const std::vector<Splat2D> splats{s};
    const auto fwd = rasterize_forward(splats, 16, 16, Vec3::Zero(), Real(0.1));
    const std::vector<Real> dcolor(16 * 16 * 3, Real(0));
    const auto back = rasterize_backward(splats, fwd.record, dcolor, {});
    CHECK(back.grads.dmean2d[0].norm() == Real(0));
    CHECK(back.grads.dopacity[0] == Real(0));
    CHECK(back.grads.dcolor[0].norm() == Real(0));
}

TEST_CASE("rasterize_backward: single splat color gradient equals alpha") {
    const Splat2D s = splat_at(Real(8.5), Real(8.5), Real(0.6), Vec3(1, 0, 0), 2);
    const std::vector<Splat2D> splats{s};
    const auto fwd = rasterize_forward(splats, 16, 16, Vec3::Zero(), Real(0.1));
    // L = red channel of the center pixel
    std::vector<Real> dcolor(16 * 16 * 3, Real(0));
    const size_t pix = 8 * 16 + 8;
    dcolor[pix * 3 + 0] = Real(1);
    const auto back = rasterize_backward(splats, fwd.record, dcolor, {});
    CHECK(back.grads.dcolor[0].x() ==
          doctest::Approx(0.6).epsilon(gsdiff::testing::kValueEps));
    CHECK(back.grads.dcolor[0].y() == Real(0));
}

TEST_CASE("rasterize_backward: opposing pixel gradients cancel in the signed "
          "statistic but not the absolute one") {
    // Splat centered between two pixels; equal dL/dcolor at both pixels makes
    // the mean2d gradient contributions exactly opposite.
    const Splat2D s = splat_at(Real(8.0), Real(8.5), Real(0.5), Vec3(1, 1, 1), 2);
    const std::vector<Splat2D> splats{s};
    const auto fwd = rasterize_forward(splats, 16, 16, Vec3::Zero(), Real(0.1));
    std::vector<Real> dcolor(16 * 16 * 3, Real(0));
    const size_t left = 8 * 16 + 7, right = 8 * 16 + 8;
    for (int c = 0; c < 3; ++c) {
        dcolor[left * 3 + c] = Real(1);
        dcolor[right * 3 + c] = Real(1);
    }
    const auto back = rasterize_backward(splats, fwd.record, dcolor, {});
    CHECK(std::abs(back.stats.grad2d[0].x()) < 1e-12);
    CHECK(back.stats.abs_grad2d[0].x() > 1e-4);
    // hit twice, on both probed pixels (plus any others with zero cotangent)
    CHECK(back.stats.hit_count[0] >= 2);
    // triangle inequality between the two statistics
    CHECK(back.stats.abs_grad2d[0].x() >= std::abs(back.stats.grad2d[0].x()));
    CHECK(back.stats.abs_grad2d[0].y() >= std::abs(back.stats.grad2d[0].y()));
}

TEST_CASE("rasterize_backward rejects mismatched shapes") {
    const Splat2D s = splat_at(Real(8.5), Real(8.5), Real(0.6), Vec3(1, 0, 0), 2);
    const std::vector<Splat2D> splats{s};
    const auto fwd = rasterize_forward(splats, 16, 16, Vec3::Zero(), Real(0.1));
    const std::vector<Real> wrong(8 * 8 * 3, Real(0));
    CHECK_THROWS_AS((void)rasterize_backward(splats, fwd.record, wrong, {}),
                    std::invalid_argument);
}

TEST_CASE("rasterize_forward rejects non-positive sizes") {
    CHECK_THROWS_AS((void)rasterize_forward({}, 0, 8, Vec3::Zero(), Real(0.1)),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)rasterize_forward({}, 8, -1, Vec3::Zero(), Real(0.1)),
                    std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST_CASE("pipeline gradients match finite differences (small scene)") {
    using namespace gsdiff::testing;
    FdScene scene = make_safe_fd_scene(100, 6, 16);
    const FdCheckResult res = fd_check_scene(scene);
    INFO(res.detail);
    CHECK(res.ok);
    CHECK(res.checked > 100);
    CHECK(res.worst_rel < kFdRelTol);
}
