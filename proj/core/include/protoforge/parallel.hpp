#pragma once

#include <cstddef>
#include <functional>

namespace protoforge {

// Worker count for internal loops: PROTO_FORGE_THREADS when set to a positive
// integer, otherwise std::thread::hardware_concurrency().
std::size_t thread_count();

// Calls fn(i) for i in [0, n) across up to thread_count() threads. Each index
// is visited exactly once; callers write results into per-index slots so the
// outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace protoforge
