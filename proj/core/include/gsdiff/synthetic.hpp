#pragma once

#include "gsdiff/dataset.hpp"
#include "gsdiff/primitives.hpp"
#include "gsdiff/renderer.hpp"

#include <string>
#include <vector>

namespace gsdiff {

struct SyntheticSceneConfig {
    uint64_t seed = 7;
    int gaussians = 60;
    int sh_degree = 1;
    Real extent = Real(1); // half width of the gaussian cloud
};

/// Seeded colored gaussian cloud for tests and demos.
std::vector<Gaussian3D> make_synthetic_scene(const SyntheticSceneConfig& cfg);

struct OrbitConfig {
    int views = 8;
    int width = 64, height = 64;
    Real radius = Real(4);
    Real elevation = Real(0.35); // radians above the equator
    Real focal = Real(70);
};

/// Cameras on an orbit looking at the origin.
std::vector<std::pair<CameraIntrinsics, Pose>> make_orbit_cameras(const OrbitConfig& cfg);

struct SyntheticDatasetConfig {
    SyntheticSceneConfig scene;
    OrbitConfig orbit;
    RenderConfig render;
    bool with_depth = true;
    bool with_masks = false;
};

/// Renders the scene into a SceneDataset: quantized ground-truth images,
/// softmax-depth priors, the gaussian centers/colors as the SfM point seed.
struct SyntheticDataset {
    SceneDataset dataset;
    std::vector<Gaussian3D> scene;
};
SyntheticDataset make_synthetic_dataset(const SyntheticDatasetConfig& cfg);

/// Scene file used by the ground-truth oracle in the CLI.
void save_scene_gaussians(const std::string& path, std::span<const Gaussian3D> scene);
std::vector<Gaussian3D> load_scene_gaussians(const std::string& path);

} // namespace gsdiff
