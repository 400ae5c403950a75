#pragma once

#include "gsdiff/types.hpp"

namespace gsdiff {

// SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2 on
// [0,1] images. Windowed moments use zero-padded same-size convolution so
// small images (below the window size) stay well defined.

struct SsimMaps {
    Image map;   // per-pixel, per-channel SSIM value
    Real mean;   // mean over all pixels and channels
};

SsimMaps ssim_map(const Image& x, const Image& y);

/// dL/dx given dL/dmap (same shape as the inputs; y is treated constant).
Image ssim_map_backward(const Image& x, const Image& y, const Image& dmap);

/// 2x2 average pooling; trailing odd row/column is dropped.
Image downsample2(const Image& img);
/// Transpose of downsample2: distributes each coarse gradient over its 2x2 block.
Image downsample2_backward(const Image& fine_shape_ref, const Image& dcoarse);

} // namespace gsdiff
