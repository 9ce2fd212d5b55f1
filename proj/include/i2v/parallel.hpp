#pragma once

#include <cstddef>
#include <functional>

namespace i2v {

// Worker cap from I2V_LAB_THREADS; unset or 0 means hardware concurrency.
// ConfigError on a value that is not a non-negative integer.
std::size_t worker_threads();

// Runs fn(i) for i in [0, n) on up to worker_threads() threads. Each index is
// handled exactly once, so results written per index do not depend on the
// thread count. The first exception thrown is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace i2v
