#pragma once

#include <cstddef>
#include <functional>

namespace embproc {

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items are
// independent; callers that reduce must write into per-index slots.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

// Thread count from EMBPROC_THREADS, falling back to 1.
unsigned default_threads();

}  // namespace embproc
