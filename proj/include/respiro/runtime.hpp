#pragma once

#include <cstdint>
#include <functional>

namespace respiro::runtime {

// Worker cap for file-level parallelism: min(hardware threads,
// RESPIRO_THREADS when set). Always at least 1.
int thread_cap();

// Runs fn(i) for i in [0, n) across up to thread_cap() workers (capped
// further by max_workers if positive). Results must be written to disjoint
// slots; iteration order within a worker is ascending, so per-index work
// must not depend on other indices. Exceptions are captured and the first
// one (lowest index) is rethrown after all workers join.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn,
                  int max_workers = 0);

}  // namespace respiro::runtime
