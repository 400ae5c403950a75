#include "gsdiff/metrics.hpp"

#include "gsdiff/ssim.hpp"

#include <cmath>
#include <limits>

namespace gsdiff {

Real psnr(const Image& a, const Image& b) {
    require(a.same_shape(b), "psnr: image shapes must match");
    Real mse = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const Real d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= Real(a.data.size());
    if (mse == Real(0)) return std::numeric_limits<Real>::infinity();
    return Real(10) * std::log10(Real(1) / mse);
}

Real ssim(const Image& a, const Image& b) { return ssim_map(a, b).mean; }

} // namespace gsdiff
