#pragma once

#include <cstddef>
#include <functional>

namespace dsct {

/// Caps the worker count used by parallel_for. 0 selects hardware concurrency.
void set_max_threads(std::size_t count);
std::size_t max_threads();

/// Runs body(i) for i in [0, n) on up to max_threads() workers, in contiguous chunks.
/// body must only write state owned by index i. The first exception thrown by
/// any worker is rethrown on the calling thread after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace dsct
