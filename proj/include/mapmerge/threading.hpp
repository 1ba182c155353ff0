#pragma once

#include <cstddef>
#include <functional>

namespace mapmerge {

// Worker count: MAPMERGE_THREADS if set and positive, else hardware
// concurrency. Resolved once per process.
std::size_t worker_count();

// Runs fn(i) for i in [begin, end). Work is split into contiguous index
// blocks; fn must only write state owned by index i so the result is
// identical for any worker count. Runs inline when a single worker suffices.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& fn);

}  // namespace mapmerge
