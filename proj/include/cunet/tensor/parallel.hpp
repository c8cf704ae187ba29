#pragma once

#include <cstddef>
#include <functional>

namespace cunet {

/// Worker count for data-parallel kernels. Read once from the
/// CUNET_NUM_THREADS environment variable, else hardware concurrency.
std::size_t num_threads();

/// Overrides the worker count for the rest of the process (0 = auto).
void set_num_threads(std::size_t n);

/// Runs body(i) for i in [0, count). Each index is handled by exactly one
/// worker, so kernels that write disjoint outputs per index stay
/// bit-deterministic regardless of the thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace cunet
