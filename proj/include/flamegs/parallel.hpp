#pragma once

#include <cstddef>
#include <functional>

namespace flamegs {

/// Thread count from FLAMEGS_THREADS, or 1 when unset or invalid.
int default_thread_count();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items are
/// statically strided across workers; callers must write to disjoint outputs.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace flamegs
