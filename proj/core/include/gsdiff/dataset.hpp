#pragma once

#include "gsdiff/geometry.hpp"
#include "gsdiff/types.hpp"

#include <string>
#include <vector>

namespace gsdiff {

struct PointCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> colors; // [0,1]
};

struct SceneDataset {
    std::vector<View> views;
    PointCloud points;
    Real scene_scale = 0; // camera-center bounding-box diagonal
};

/// Layout: images/*.png|ppm, masks/*.pgm, depth/*.pfm, cameras.txt
/// (`name fx fy cx cy width height qw qx qy qz tx ty tz`, world-to-camera),
/// points3d.txt (`x y z r g b`, colors 0-255). Optional files are matched by
/// filename stem; appearance ids follow sorted image order.
SceneDataset load_dataset(const std::string& dir);

void save_dataset(const std::string& dir, const SceneDataset& dataset);

Real camera_bbox_diagonal(std::span<const View> views);

} // namespace gsdiff
