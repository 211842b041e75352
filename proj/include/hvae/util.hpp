#pragma once

#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace hvae {

/// Worker-parallelism cap from HVAE_THREADS (default 1, keeping runs
/// byte-exact serial unless explicitly widened).
inline int worker_threads() {
    const char* env = std::getenv("HVAE_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

/// Index-parallel loop. Each index must write only its own slots; chunk
/// boundaries are deterministic, so serial and parallel execution produce
/// identical bytes.
inline void parallel_for(long n, const std::function<void(long)>& fn, int threads = 0) {
    if (threads <= 0) threads = worker_threads();
    if (threads <= 1 || n <= 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    const long chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const long lo = t * chunk;
        const long hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (long i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace hvae
