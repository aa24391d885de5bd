#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace sfkit {

/// Runs fn(0..count-1) over a bounded pool (0 workers = hardware concurrency).
/// Callers store results by index, so scheduling cannot change any output.
inline void parallel_items(std::size_t count, int workers,
                           const std::function<void(std::size_t)>& fn) {
  if (workers <= 0) {
    const unsigned hc = std::thread::hardware_concurrency();
    workers = hc > 0 ? static_cast<int>(hc) : 1;
  }
  workers = std::min<int>(workers, static_cast<int>(count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace sfkit
