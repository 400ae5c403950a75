#pragma once

#include "gsdiff/types.hpp"

namespace gsdiff {

/// 10 * log10(1 / MSE) over all pixels and channels; +infinity for identical
/// images (values assumed in [0,1]).
Real psnr(const Image& a, const Image& b);

/// Mean SSIM with the loss-module constants (11x11 window, sigma 1.5).
Real ssim(const Image& a, const Image& b);

} // namespace gsdiff
