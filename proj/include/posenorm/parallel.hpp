#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace posenorm {

// Runs body(i) for i in [0, n) on up to `workers` threads with static
// contiguous chunks. Results must be written to per-index slots so the output
// does not depend on the worker count. The first exception is rethrown.
template <typename Body>
void parallel_for(std::size_t n, std::size_t workers, Body&& body) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::size_t default_workers() {
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

}  // namespace posenorm
