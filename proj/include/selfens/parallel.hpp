#pragma once

#include <cstddef>
#include <functional>

namespace selfens {

/// Worker count: SELFENS_THREADS when set (>= 1), else the hardware count.
int default_thread_count();

/// Runs fn(i) for i in [0, count) on up to `threads` workers (0 = default).
/// Work is split into contiguous blocks; callers write results to
/// per-index slots so output never depends on scheduling.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)> &fn);

} // namespace selfens
