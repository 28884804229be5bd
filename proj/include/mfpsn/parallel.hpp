#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace mfpsn {

namespace detail {
inline std::size_t &thread_setting() {
  static std::size_t threads = 1;
  return threads;
}
} // namespace detail

inline void set_num_threads(std::size_t n) {
  detail::thread_setting() = std::max<std::size_t>(1, n);
}
inline std::size_t num_threads() { return detail::thread_setting(); }

// Runs fn(i) for i in [0, count) over contiguous chunks, one per thread.
// Callers only parallelize over independent outputs, so results do not
// depend on the thread count.
template <typename Fn> void parallel_for(std::size_t count, Fn &&fn) {
  const std::size_t workers = std::min(num_threads(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i)
      fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    pool.emplace_back([&fn, begin, end] {
      for (std::size_t i = begin; i < end; ++i)
        fn(i);
    });
  }
  for (auto &t : pool)
    t.join();
}

} // namespace mfpsn
