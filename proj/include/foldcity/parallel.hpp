#pragma once

#include <cstddef>
#include <functional>

namespace foldcity {

/// Default worker count: FOLDCITY_THREADS if set, else hardware concurrency.
int default_thread_count();

/// Process-wide worker count used by parallel_for when threads == 0.
void set_thread_count(int threads);
int thread_count();

/// Runs fn(i) for i in [0, n). Each index is visited exactly once; callers write
/// results into disjoint slots so output never depends on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int threads = 0);

}  // namespace foldcity
