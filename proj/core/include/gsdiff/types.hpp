#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace gsdiff {

// Scalar type of the whole pipeline. Single precision is a build-time switch
// (-DGSDIFF_REAL_FLOAT); a run never mixes precisions.
#ifdef GSDIFF_REAL_FLOAT
using Real = float;
#else
using Real = double;
#endif

using Vec2 = Eigen::Matrix<Real, 2, 1>;
using Vec3 = Eigen::Matrix<Real, 3, 1>;
using Vec4 = Eigen::Matrix<Real, 4, 1>;
using Mat2 = Eigen::Matrix<Real, 2, 2>;
using Mat3 = Eigen::Matrix<Real, 3, 3>;
using Quat = Eigen::Quaternion<Real>;
using VecX = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

/// Dense row-major raster, `channels` interleaved. Values are typically in
/// [0,1] for color, {0,1} for masks, positive meters for depth.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<Real> data;

    Image() = default;
    Image(int w, int h, int c, Real fill = 0)
        : width(w), height(h), channels(c),
          data(static_cast<size_t>(w) * h * c, fill) {}

    Real& at(int row, int col, int c = 0) {
        return data[(static_cast<size_t>(row) * width + col) * channels + c];
    }
    Real at(int row, int col, int c = 0) const {
        return data[(static_cast<size_t>(row) * width + col) * channels + c];
    }
    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

inline void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

} // namespace gsdiff
