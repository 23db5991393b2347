#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace ibss {

namespace detail {
inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{0};  // 0 means "use hardware concurrency"
  return cap;
}
}  // namespace detail

inline void set_max_threads(int n) { detail::thread_cap().store(n); }

inline int effective_threads(std::size_t n_items) {
  int cap = detail::thread_cap().load();
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  int t = (cap > 0) ? std::min(cap, hw) : hw;
  return static_cast<int>(std::min<std::size_t>(t, std::max<std::size_t>(n_items, 1)));
}

// Runs fn(i) for i in [0, n) split into contiguous per-worker chunks.
// Results must be written to disjoint slots indexed by i; reductions across
// iterations belong in a sequential pass afterwards so the output does not
// depend on the worker count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  int workers = effective_threads(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::size_t chunk = (n + static_cast<std::size_t>(workers) - 1) / static_cast<std::size_t>(workers);
  for (int w = 0; w < workers; ++w) {
    std::size_t lo = static_cast<std::size_t>(w) * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi]() {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace ibss
