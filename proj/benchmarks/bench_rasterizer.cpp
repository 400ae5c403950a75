#include <benchmark/benchmark.h>

#include "gsdiff/random.hpp"
#include "gsdiff/renderer.hpp"
#include "gsdiff/synthetic.hpp"

using namespace gsdiff;

namespace {

struct BenchScene {
    std::vector<Gaussian3D> scene;
    CameraIntrinsics intrinsics;
    Pose pose;
    RenderConfig cfg;
};

BenchScene make_scene(int gaussians, int size) {
    SyntheticSceneConfig sc;
    sc.gaussians = gaussians;
    BenchScene out;
    out.scene = make_synthetic_scene(sc);
    OrbitConfig orbit;
    orbit.views = 1;
    orbit.width = orbit.height = size;
    const auto cams = make_orbit_cameras(orbit);
    out.intrinsics = cams[0].first;
    out.pose = cams[0].second;
    return out;
}

} // namespace

static void BM_RasterizeForward(benchmark::State& state) {
    const BenchScene s = make_scene(static_cast<int>(state.range(0)), 128);
    const PreparedGaussians batch = prepare_direct(s.scene, s.pose);
    for (auto _ : state) {
        auto result = render_gaussians(batch, s.intrinsics, s.pose, s.cfg);
        benchmark::DoNotOptimize(result.raster.out.color.data());
    }
}
BENCHMARK(BM_RasterizeForward)->Arg(64)->Arg(256)->Arg(1024);

static void BM_RasterizeBackward(benchmark::State& state) {
    const BenchScene s = make_scene(static_cast<int>(state.range(0)), 128);
    const PreparedGaussians batch = prepare_direct(s.scene, s.pose);
    const PipelineState fwd = render_gaussians(batch, s.intrinsics, s.pose, s.cfg);
    std::vector<Real> dcolor(fwd.raster.out.color.size(), Real(1e-3));
    for (auto _ : state) {
        auto grads =
            render_gaussians_backward(batch, s.intrinsics, s.pose, s.cfg, fwd, dcolor, {});
        benchmark::DoNotOptimize(grads.dmu.data());
    }
}
BENCHMARK(BM_RasterizeBackward)->Arg(64)->Arg(256)->Arg(1024);
