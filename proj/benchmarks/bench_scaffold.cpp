#include <benchmark/benchmark.h>

#include "gsdiff/random.hpp"
#include "gsdiff/scaffold.hpp"

using namespace gsdiff;

static void BM_DecodeAnchors(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Rng rng(11);
    DecoderBank bank = DecoderBank::init(32, 10, 16, 32, 4, rng);
    std::vector<Anchor> anchors(n);
    for (Anchor& a : anchors) {
        a.x_v = Vec3(rng.normal(), rng.normal(), rng.normal());
        a.feature = VecX::Zero(32);
        for (int f = 0; f < 32; ++f) a.feature[f] = rng.normal() * Real(0.1);
        a.offsets.assign(10, Vec3::Zero());
        for (auto& o : a.offsets) o = Vec3(rng.normal(), rng.normal(), rng.normal());
        a.log_lv = Vec3::Constant(Real(-2));
    }
    const Vec3 cam(0, 0, -4);
    for (auto _ : state) {
        auto dec = decode_anchors(anchors, bank, cam, 0);
        benchmark::DoNotOptimize(dec.batch.mu.data());
    }
}
BENCHMARK(BM_DecodeAnchors)->Arg(128)->Arg(512)->Arg(2048);
