#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace xcam {

// Global intra-op thread budget. Work is split into contiguous index chunks,
// each index computed independently, so results are bit-identical for any
// thread count.
int num_threads();
void set_num_threads(int t);

// Runs fn(i) for i in [0, n). Parallel only when it pays off.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const int t = std::min<std::size_t>(static_cast<std::size_t>(num_threads()), n);
    if (t <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(t));
    const std::size_t chunk = (n + static_cast<std::size_t>(t) - 1) / static_cast<std::size_t>(t);
    for (int w = 0; w < t; ++w) {
        const std::size_t lo = static_cast<std::size_t>(w) * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        workers.emplace_back([&fn, lo, hi] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : workers) th.join();
}

} // namespace xcam
