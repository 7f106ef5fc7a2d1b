#pragma once
#include <algorithm>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace stan {

// Process-wide worker count, set once by the CLI (--threads). Defaults to 1.
// Parallel loops are only ever used where each index writes disjoint output,
// so results are identical for every thread count.
inline int& num_threads() {
    static int n = 1;
    return n;
}

inline void set_num_threads(int n) { num_threads() = n < 1 ? 1 : n; }

// Chunked parallel for over [begin, end). fn(i) must not touch state shared
// with other indices.
template <typename Fn>
void parallel_for(std::int64_t begin, std::int64_t end, Fn&& fn) {
    const std::int64_t count = end - begin;
    const int workers = num_threads();
    if (workers <= 1 || count < 2) {
        for (std::int64_t i = begin; i < end; ++i) fn(i);
        return;
    }
    const int used = static_cast<int>(std::min<std::int64_t>(workers, count));
    const std::int64_t chunk = (count + used - 1) / used;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(used));
    for (int w = 0; w < used; ++w) {
        const std::int64_t lo = begin + w * chunk;
        const std::int64_t hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace stan
