#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace nrtr {

/// Worker cap: NRTR_THREADS when set, otherwise hardware concurrency.
/// Re-read on every call so the cap can be changed mid-process.
inline int max_threads() {
    if (const char* env = std::getenv("NRTR_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Static range partition over [0, n). Chunk boundaries depend only on n
/// and the thread count, so results are reproducible for a fixed count;
/// workers must write disjoint outputs.
inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    const int threads = static_cast<int>(std::min<std::int64_t>(max_threads(), n));
    if (threads <= 1) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::int64_t chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const std::int64_t lo = t * chunk;
        const std::int64_t hi = std::min<std::int64_t>(lo + chunk, n);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace nrtr
