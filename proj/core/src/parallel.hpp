#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace gsdiff::detail {

/// Runs fn(i) for i in [0, n) on up to n_threads threads in contiguous
/// chunks. Callers keep results in per-index slots, so the schedule never
/// affects the output.
template <class F>
void parallel_indexed(int n, int n_threads, F&& fn) {
    if (n <= 0) return;
    if (n_threads <= 0)
        n_threads = static_cast<int>(std::thread::hardware_concurrency());
    n_threads = std::clamp(n_threads, 1, n);
    if (n_threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    const int chunk = (n + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
        const int lo = t * chunk;
        const int hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (int i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace gsdiff::detail
