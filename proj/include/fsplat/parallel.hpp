#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace fsplat {

/// Resolves a requested thread count; 0 means hardware concurrency.
inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Splits [0, n) into contiguous chunks, one per worker; fn(begin, end, worker) runs on each.
/// Chunk boundaries depend only on n and the worker count, so reductions merged in worker
/// order are deterministic.
template <typename Fn>
void parallel_chunks(int n, int threads, Fn &&fn) {
    const int workers = std::max(1, std::min(threads, n));
    if (workers == 1) {
        fn(0, n, 0);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        const int begin = static_cast<int>(static_cast<long long>(n) * w / workers);
        const int end = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
        pool.emplace_back([&fn, begin, end, w] { fn(begin, end, w); });
    }
}

} // namespace fsplat
