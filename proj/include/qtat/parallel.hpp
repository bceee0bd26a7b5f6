#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <future>
#include <string>
#include <thread>
#include <vector>

namespace qtat {

namespace detail {
inline std::atomic<std::size_t>& thread_setting() {
  static std::atomic<std::size_t> n{0};
  return n;
}
}  // namespace detail

/// Worker count used by parallel loops. 0 means: QTAT_THREADS if set, else hardware concurrency.
inline void set_threads(std::size_t n) { detail::thread_setting() = n; }

inline std::size_t thread_count() {
  std::size_t n = detail::thread_setting();
  if (n) return n;
  if (const char* env = std::getenv("QTAT_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs body(begin, end) over contiguous chunks of [0, n). Chunk boundaries
/// depend only on n and the worker count, and chunks never share outputs, so
/// results do not depend on scheduling.
template <class Body>
void parallel_for(std::size_t n, Body&& body, std::size_t min_chunk = 4096) {
  std::size_t workers = std::min(thread_count(), std::max<std::size_t>(1, n / min_chunk));
  if (workers <= 1) {
    body(std::size_t{0}, n);
    return;
  }
  std::vector<std::future<void>> jobs;
  std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    std::size_t b = w * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    jobs.push_back(std::async(std::launch::async, [&body, b, e] { body(b, e); }));
  }
  for (auto& j : jobs) j.get();
}

/// Evaluates fn(i) for i in [0, n) concurrently and returns results in index order.
template <class Fn>
auto parallel_map(std::size_t n, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using R = decltype(fn(std::size_t{}));
  std::vector<R> out(n);
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = fn(i);
  }, 1);
  return out;
}

}  // namespace qtat
