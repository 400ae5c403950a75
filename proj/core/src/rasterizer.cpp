#include "gsdiff/rasterizer.hpp"

#include "parallel.hpp"

#include <algorithm>
#include <cmath>

namespace gsdiff {

void RenderDiagnostics::merge(const RenderDiagnostics& o) {
    alpha_cut_margin = std::min(alpha_cut_margin, o.alpha_cut_margin);
    alpha_clamp_margin = std::min(alpha_clamp_margin, o.alpha_clamp_margin);
    termination_margin = std::min(termination_margin, o.termination_margin);
    softmax_gap = std::min(softmax_gap, o.softmax_gap);
    color_clamp_margin = std::min(color_clamp_margin, o.color_clamp_margin);
    frustum_margin = std::min(frustum_margin, o.frustum_margin);
    near_plane_margin = std::min(near_plane_margin, o.near_plane_margin);
    opacity_gate_margin = std::min(opacity_gate_margin, o.opacity_gate_margin);
    relu_margin = std::min(relu_margin, o.relu_margin);
}

Real RenderDiagnostics::overall_min() const {
    return std::min({alpha_cut_margin, alpha_clamp_margin, termination_margin,
                     softmax_gap, color_clamp_margin, frustum_margin,
                     near_plane_margin, opacity_gate_margin, relu_margin});
}

namespace {

struct PreparedSplat {
    uint32_t index; // into the input span
    Vec2 mean;
    Mat2 conic;
    Real opacity;
    Vec3 color;
    Real depth;
    int x0, x1, y0, y1; // inclusive pixel index bounds
};

struct Binning {
    std::vector<PreparedSplat> prepared; // sorted by (depth, index)
    std::vector<std::vector<uint32_t>> tile_lists; // positions into prepared
    int tiles_x = 0, tiles_y = 0;
};

/// Culls, inverts covariances, computes conservative pixel bounds covering
/// both the 3-sigma box and the alpha >= 1/255 contour, sorts by depth and
/// bins to tiles (per-tile lists inherit the global depth order).
Binning bin_splats(std::span<const Splat2D> splats, int width, int height,
                   RenderDiagnostics* diag) {
    Binning bin;
    bin.tiles_x = (width + kTileSize - 1) / kTileSize;
    bin.tiles_y = (height + kTileSize - 1) / kTileSize;
    bin.prepared.reserve(splats.size());

    for (uint32_t i = 0; i < splats.size(); ++i) {
        const Splat2D& s = splats[i];
        if (!(s.depth > Real(0))) continue;
        if (diag && s.opacity < kAlphaCut)
            diag->alpha_cut_margin =
                std::min(diag->alpha_cut_margin, kAlphaCut - s.opacity);
        if (s.opacity < kAlphaCut) continue;

        const Real det = s.cov2d.determinant();
        if (!(det > Real(1e-300)) || !std::isfinite(det)) continue;

        const Real r_alpha = std::sqrt(std::max(
            Real(2) * std::log(s.opacity / kAlphaCut), Real(0)));
        const Real r = std::max(Real(3), r_alpha);
        const Real hw_x = r * std::sqrt(std::max(s.cov2d(0, 0), Real(0)));
        const Real hw_y = r * std::sqrt(std::max(s.cov2d(1, 1), Real(0)));

        // Pixel (row, col) has center (col + 0.5, row + 0.5).
        const int x0 = std::max(0, static_cast<int>(std::ceil(s.mean2d.x() - hw_x - Real(0.5))));
        const int x1 = std::min(width - 1, static_cast<int>(std::floor(s.mean2d.x() + hw_x - Real(0.5))));
        const int y0 = std::max(0, static_cast<int>(std::ceil(s.mean2d.y() - hw_y - Real(0.5))));
        const int y1 = std::min(height - 1, static_cast<int>(std::floor(s.mean2d.y() + hw_y - Real(0.5))));
        if (x0 > x1 || y0 > y1) continue;

        PreparedSplat p;
        p.index = i;
        p.mean = s.mean2d;
        p.conic = s.cov2d.inverse();
        p.opacity = s.opacity;
        p.color = s.color;
        p.depth = s.depth;
        p.x0 = x0;
        p.x1 = x1;
        p.y0 = y0;
        p.y1 = y1;
        bin.prepared.push_back(p);
    }

    std::sort(bin.prepared.begin(), bin.prepared.end(),
              [](const PreparedSplat& a, const PreparedSplat& b) {
                  if (a.depth != b.depth) return a.depth < b.depth;
                  return a.index < b.index;
              });

    bin.tile_lists.resize(static_cast<size_t>(bin.tiles_x) * bin.tiles_y);
    for (uint32_t pos = 0; pos < bin.prepared.size(); ++pos) {
        const PreparedSplat& p = bin.prepared[pos];
        for (int ty = p.y0 / kTileSize; ty <= p.y1 / kTileSize; ++ty)
            for (int tx = p.x0 / kTileSize; tx <= p.x1 / kTileSize; ++tx)
                bin.tile_lists[static_cast<size_t>(ty) * bin.tiles_x + tx].push_back(pos);
    }
    return bin;
}

struct SoftmaxDepth {
    Real depth = 0;
    int argmax = 0;
    Real tau_eff = 0;
};

/// Softmax-scaled depth over contributor weights w_i = alpha_i * T_i with the
/// per-pixel adaptive temperature tau_rel * max(w).
SoftmaxDepth softmax_depth(std::span<const Real> ws, std::span<const Real> depths,
                           Real tau_rel, std::vector<Real>& softmax_scratch) {
    SoftmaxDepth sd;
    const size_t n = ws.size();
    size_t arg = 0;
    for (size_t i = 1; i < n; ++i)
        if (ws[i] > ws[arg]) arg = i;
    sd.argmax = static_cast<int>(arg);
    sd.tau_eff = tau_rel * ws[arg];

    softmax_scratch.resize(n);
    Real denom = 0;
    const Real u_max = ws[arg] / sd.tau_eff;
    for (size_t i = 0; i < n; ++i) {
        softmax_scratch[i] = std::exp(ws[i] / sd.tau_eff - u_max);
        denom += softmax_scratch[i];
    }
    Real d = 0;
    for (size_t i = 0; i < n; ++i) {
        softmax_scratch[i] /= denom;
        d += depths[i] * softmax_scratch[i];
    }
    sd.depth = d;
    return sd;
}

} // namespace

ForwardResult rasterize_forward(std::span<const Splat2D> splats, int width, int height,
                                const Vec3& background, Real tau_rel, int n_threads,
                                RenderDiagnostics* diag) {
    require(width > 0 && height > 0, "rasterize_forward: image size must be positive");
    require(tau_rel > Real(0), "rasterize_forward: tau must be positive");

    ForwardResult res;
    res.out.width = width;
    res.out.height = height;
    res.out.color.assign(static_cast<size_t>(width) * height * 3, Real(0));
    res.out.depth.assign(static_cast<size_t>(width) * height, Real(0));
    res.out.final_transmittance.assign(static_cast<size_t>(width) * height, Real(1));
    res.out.contrib_count.assign(static_cast<size_t>(width) * height, 0);
    res.record.width = width;
    res.record.height = height;
    res.record.tau_rel = tau_rel;
    res.record.background = background;

    RenderDiagnostics bin_diag;
    const Binning bin = bin_splats(splats, width, height, diag ? &bin_diag : nullptr);

    const int n_tiles = bin.tiles_x * bin.tiles_y;
    std::vector<std::vector<uint32_t>> pixel_lists(
        static_cast<size_t>(width) * height);
    std::vector<RenderDiagnostics> tile_diag(diag ? n_tiles : 0);

    detail::parallel_indexed(n_tiles, n_threads, [&](int tile) {
        const int tx = tile % bin.tiles_x;
        const int ty = tile / bin.tiles_x;
        const auto& list = bin.tile_lists[tile];
        RenderDiagnostics* td = diag ? &tile_diag[tile] : nullptr;

        std::vector<Real> ws, depths, softmax_scratch;
        const int row_end = std::min(height, (ty + 1) * kTileSize);
        const int col_end = std::min(width, (tx + 1) * kTileSize);
        for (int row = ty * kTileSize; row < row_end; ++row) {
            for (int col = tx * kTileSize; col < col_end; ++col) {
                const Vec2 center(Real(col) + Real(0.5), Real(row) + Real(0.5));
                const size_t pix = static_cast<size_t>(row) * width + col;

                Vec3 acc = Vec3::Zero();
                Real T = 1;
                ws.clear();
                depths.clear();
                auto& contribs = pixel_lists[pix];

                for (uint32_t pos : list) {
                    const PreparedSplat& p = bin.prepared[pos];
                    if (col < p.x0 || col > p.x1 || row < p.y0 || row > p.y1) continue;
                    if (T < kTransmittanceFloor) {
                        if (td)
                            td->termination_margin = std::min(
                                td->termination_margin, kTransmittanceFloor - T);
                        break;
                    }
                    if (td)
                        td->termination_margin = std::min(td->termination_margin,
                                                          T - kTransmittanceFloor);
                    const Vec2 d = center - p.mean;
                    const Real q = d.dot(p.conic * d);
                    if (q < Real(0)) continue;
                    const Real alpha_raw = p.opacity * std::exp(Real(-0.5) * q);
                    if (td) {
                        td->alpha_cut_margin = std::min(
                            td->alpha_cut_margin, std::abs(alpha_raw - kAlphaCut));
                        td->alpha_clamp_margin = std::min(
                            td->alpha_clamp_margin, std::abs(alpha_raw - kAlphaClamp));
                    }
                    if (alpha_raw < kAlphaCut) continue;
                    const Real alpha = std::min(alpha_raw, kAlphaClamp);

                    acc += p.color * (alpha * T);
                    ws.push_back(alpha * T);
                    depths.push_back(p.depth);
                    contribs.push_back(p.index);
                    T *= Real(1) - alpha;
                }

                acc += background * T;
                res.out.color[pix * 3 + 0] = acc.x();
                res.out.color[pix * 3 + 1] = acc.y();
                res.out.color[pix * 3 + 2] = acc.z();
                res.out.final_transmittance[pix] = T;
                res.out.contrib_count[pix] = static_cast<int>(ws.size());
                if (!ws.empty()) {
                    const SoftmaxDepth sd =
                        softmax_depth(ws, depths, tau_rel, softmax_scratch);
                    res.out.depth[pix] = sd.depth;
                    if (td && ws.size() >= 2) {
                        Real second = -std::numeric_limits<Real>::infinity();
                        for (size_t i = 0; i < ws.size(); ++i)
                            if (static_cast<int>(i) != sd.argmax)
                                second = std::max(second, ws[i]);
                        td->softmax_gap = std::min(
                            td->softmax_gap, (ws[sd.argmax] - second) / ws[sd.argmax]);
                    }
                }
            }
        }
    });

    if (diag) {
        diag->merge(bin_diag);
        for (const auto& td : tile_diag) diag->merge(td);
    }

    // Flatten per-pixel lists into the record.
    res.record.offsets.resize(static_cast<size_t>(width) * height + 1);
    res.record.offsets[0] = 0;
    size_t total = 0;
    for (size_t p = 0; p < pixel_lists.size(); ++p) {
        total += pixel_lists[p].size();
        res.record.offsets[p + 1] = static_cast<uint32_t>(total);
    }
    res.record.contributors.reserve(total);
    for (const auto& list : pixel_lists)
        res.record.contributors.insert(res.record.contributors.end(), list.begin(),
                                       list.end());
    return res;
}

BackwardResult rasterize_backward(std::span<const Splat2D> splats,
                                  const BlendRecord& record,
                                  std::span<const Real> dl_dcolor,
                                  std::span<const Real> dl_ddepth, int n_threads) {
    const int width = record.width, height = record.height;
    const size_t n_pix = static_cast<size_t>(width) * height;
    require(dl_dcolor.size() == n_pix * 3,
            "rasterize_backward: dl_dcolor shape mismatch");
    require(dl_ddepth.empty() || dl_ddepth.size() == n_pix,
            "rasterize_backward: dl_ddepth shape mismatch");
    require(record.offsets.size() == n_pix + 1,
            "rasterize_backward: record does not match image size");

    const size_t n_splats = splats.size();
    BackwardResult res;
    res.grads.dmean2d.assign(n_splats, Vec2::Zero());
    res.grads.dcov2d.assign(n_splats, Mat2::Zero());
    res.grads.dopacity.assign(n_splats, Real(0));
    res.grads.dcolor.assign(n_splats, Vec3::Zero());
    res.grads.ddepth.assign(n_splats, Real(0));
    res.stats.abs_grad2d.assign(n_splats, Vec2::Zero());
    res.stats.grad2d.assign(n_splats, Vec2::Zero());
    res.stats.hit_count.assign(n_splats, 0);

    const int tiles_x = (width + kTileSize - 1) / kTileSize;
    const int tiles_y = (height + kTileSize - 1) / kTileSize;
    const int n_tiles = tiles_x * tiles_y;

    struct TileAccum {
        std::vector<uint32_t> ids; // sorted unique splat ids in this tile
        std::vector<Vec2> dmean2d;
        std::vector<Mat2> dcov2d;
        std::vector<Real> dopacity;
        std::vector<Vec3> dcolor;
        std::vector<Real> ddepth;
        std::vector<Vec2> abs_grad2d, grad2d;
        std::vector<int> hit_count;
    };
    std::vector<TileAccum> accums(n_tiles);

    detail::parallel_indexed(n_tiles, n_threads, [&](int tile) {
        const int tx = tile % tiles_x;
        const int ty = tile / tiles_x;
        TileAccum& acc = accums[tile];

        const int row_end = std::min(height, (ty + 1) * kTileSize);
        const int col_end = std::min(width, (tx + 1) * kTileSize);

        // Unique splats of this tile, ascending for the deterministic merge.
        for (int row = ty * kTileSize; row < row_end; ++row)
            for (int col = tx * kTileSize; col < col_end; ++col) {
                const size_t pix = static_cast<size_t>(row) * width + col;
                for (uint32_t k = record.offsets[pix]; k < record.offsets[pix + 1]; ++k)
                    acc.ids.push_back(record.contributors[k]);
            }
        std::sort(acc.ids.begin(), acc.ids.end());
        acc.ids.erase(std::unique(acc.ids.begin(), acc.ids.end()), acc.ids.end());
        const size_t n_local = acc.ids.size();
        acc.dmean2d.assign(n_local, Vec2::Zero());
        acc.dcov2d.assign(n_local, Mat2::Zero());
        acc.dopacity.assign(n_local, Real(0));
        acc.dcolor.assign(n_local, Vec3::Zero());
        acc.ddepth.assign(n_local, Real(0));
        acc.abs_grad2d.assign(n_local, Vec2::Zero());
        acc.grad2d.assign(n_local, Vec2::Zero());
        acc.hit_count.assign(n_local, 0);
        if (n_local == 0) return;

        auto local_of = [&](uint32_t id) {
            return static_cast<size_t>(
                std::lower_bound(acc.ids.begin(), acc.ids.end(), id) - acc.ids.begin());
        };

        std::vector<Real> alphas, Ts, ws, gs, qs, depths, dws, softmax_scratch;
        std::vector<Vec2> dvecs; // conic * d per contributor
        std::vector<uint8_t> clamped;

        for (int row = ty * kTileSize; row < row_end; ++row) {
            for (int col = tx * kTileSize; col < col_end; ++col) {
                const size_t pix = static_cast<size_t>(row) * width + col;
                const uint32_t k0 = record.offsets[pix], k1 = record.offsets[pix + 1];
                if (k0 == k1) continue;
                const size_t n = k1 - k0;
                const Vec2 center(Real(col) + Real(0.5), Real(row) + Real(0.5));

                alphas.resize(n);
                Ts.resize(n);
                ws.resize(n);
                gs.resize(n);
                qs.resize(n);
                depths.resize(n);
                dvecs.resize(n);
                clamped.resize(n);

                // Pass 1: reconstruct the forward blend state front-to-back.
                Real T = 1;
                for (size_t j = 0; j < n; ++j) {
                    const Splat2D& s = splats[record.contributors[k0 + j]];
                    const Mat2 conic = s.cov2d.inverse();
                    const Vec2 d = center - s.mean2d;
                    const Vec2 v = conic * d;
                    const Real q = d.dot(v);
                    const Real g = std::exp(Real(-0.5) * q);
                    const Real alpha_raw = s.opacity * g;
                    alphas[j] = std::min(alpha_raw, kAlphaClamp);
                    clamped[j] = alpha_raw > kAlphaClamp;
                    gs[j] = g;
                    qs[j] = q;
                    dvecs[j] = v;
                    depths[j] = s.depth;
                    Ts[j] = T;
                    ws[j] = alphas[j] * T;
                    T *= Real(1) - alphas[j];
                }
                const Real T_final = T;

                const Vec3 dC(dl_dcolor[pix * 3 + 0], dl_dcolor[pix * 3 + 1],
                              dl_dcolor[pix * 3 + 2]);
                const Real dD = dl_ddepth.empty() ? Real(0) : dl_ddepth[pix];

                // Depth softmax gradient w.r.t. the blend weights.
                dws.assign(n, Real(0));
                if (dD != Real(0)) {
                    const SoftmaxDepth sd =
                        softmax_depth(ws, depths, record.tau_rel, softmax_scratch);
                    Real V = 0;
                    for (size_t j = 0; j < n; ++j)
                        V += softmax_scratch[j] * (depths[j] - sd.depth) * ws[j];
                    for (size_t j = 0; j < n; ++j) {
                        Real dDdw =
                            softmax_scratch[j] * (depths[j] - sd.depth) / sd.tau_eff;
                        if (static_cast<int>(j) == sd.argmax)
                            dDdw -= V / (sd.tau_eff * ws[sd.argmax]);
                        dws[j] = dD * dDdw;
                        const size_t li = local_of(record.contributors[k0 + j]);
                        acc.ddepth[li] += dD * softmax_scratch[j];
                    }
                }

                // Pass 2: back-to-front suffix accumulation.
                Vec3 S_after = Vec3::Zero();
                Real W_after = 0;
                for (size_t jj = n; jj-- > 0;) {
                    const uint32_t id = record.contributors[k0 + jj];
                    const Splat2D& s = splats[id];
                    const size_t li = local_of(id);
                    const Real alpha = alphas[jj];
                    const Real Ti = Ts[jj];

                    acc.dcolor[li] += dC * (alpha * Ti);

                    Real dalpha =
                        dC.dot(s.color * Ti -
                               (S_after + record.background * T_final) / (Real(1) - alpha));
                    dalpha += dws[jj] * Ti - W_after / (Real(1) - alpha);

                    S_after += s.color * (alpha * Ti);
                    W_after += dws[jj] * ws[jj];

                    acc.hit_count[li] += 1;
                    if (!clamped[jj]) {
                        acc.dopacity[li] += dalpha * gs[jj];
                        const Real dq = Real(-0.5) * gs[jj] * dalpha * s.opacity;
                        const Vec2 dmean = Real(-2) * dq * dvecs[jj];
                        acc.dmean2d[li] += dmean;
                        acc.dcov2d[li] += -dq * dvecs[jj] * dvecs[jj].transpose();
                        acc.grad2d[li] += dmean;
                        acc.abs_grad2d[li] += dmean.cwiseAbs();
                    }
                }
            }
        }
    });

    // Deterministic merge: fixed tile order, ascending splat id within a tile.
    for (const TileAccum& acc : accums) {
        for (size_t l = 0; l < acc.ids.size(); ++l) {
            const uint32_t id = acc.ids[l];
            res.grads.dmean2d[id] += acc.dmean2d[l];
            res.grads.dcov2d[id] += acc.dcov2d[l];
            res.grads.dopacity[id] += acc.dopacity[l];
            res.grads.dcolor[id] += acc.dcolor[l];
            res.grads.ddepth[id] += acc.ddepth[l];
            res.stats.abs_grad2d[id] += acc.abs_grad2d[l];
            res.stats.grad2d[id] += acc.grad2d[l];
            res.stats.hit_count[id] += acc.hit_count[l];
        }
    }
    return res;
}

} // namespace gsdiff
