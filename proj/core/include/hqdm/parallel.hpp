#pragma once

#include <cstddef>
#include <functional>

namespace hqdm {

/// Worker cap: HQDM_THREADS when set (>= 1), else hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads with static
/// contiguous chunks. Callers write results to per-index slots, so output
/// never depends on the thread count. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace hqdm
