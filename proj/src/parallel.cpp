#include "i2v/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "i2v/errors.hpp"

namespace i2v {

std::size_t worker_threads() {
  std::size_t n = 0;
  if (const char* env = std::getenv("I2V_LAB_THREADS"); env != nullptr && *env != '\0') {
    const std::string s(env);
    if (s.find_first_not_of("0123456789") != std::string::npos || s.size() > 6) {
      throw ConfigError("I2V_LAB_THREADS: expected a non-negative integer, got '" + s + "'");
    }
    n = std::stoul(s);
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(run);
  run();
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace i2v
