#pragma once

#include <cstddef>
#include <functional>

namespace scpc {

// Worker cap from SCPC_THREADS (default: hardware concurrency, min 1).
std::size_t worker_thread_count();

// Runs fn(0..count-1) across workers. Each index is processed exactly once;
// callers write results into pre-sized slots so scheduling order never
// affects the output. The first exception thrown by any worker is rethrown.
void parallel_for(std::size_t count,
                  const std::function<void(std::size_t)>& fn);

}  // namespace scpc
