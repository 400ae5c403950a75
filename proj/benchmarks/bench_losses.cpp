#include <benchmark/benchmark.h>

#include "gsdiff/losses.hpp"
#include "gsdiff/random.hpp"

using namespace gsdiff;

namespace {

Image random_image(int size, uint64_t seed) {
    Rng rng(seed);
    Image img(size, size, 3);
    for (Real& v : img.data) v = rng.uniform();
    return img;
}

} // namespace

static void BM_PhotometricLoss(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    const Image a = random_image(size, 1), b = random_image(size, 2);
    for (auto _ : state) {
        auto loss = photometric_loss(a, b, nullptr, Real(0.2));
        benchmark::DoNotOptimize(loss.value);
    }
}
BENCHMARK(BM_PhotometricLoss)->Arg(64)->Arg(128)->Arg(256);

static void BM_MsSsimDistance(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    const Image a = random_image(size, 1), b = random_image(size, 2);
    MsSsimDistance metric;
    for (auto _ : state) {
        auto d = metric.distance(a, b);
        benchmark::DoNotOptimize(d.value);
    }
}
BENCHMARK(BM_MsSsimDistance)->Arg(64)->Arg(128)->Arg(256);
