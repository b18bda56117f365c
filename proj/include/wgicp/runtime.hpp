// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT

#ifndef WGICP_RUNTIME_HPP
#define WGICP_RUNTIME_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace wgicp {

namespace detail {
inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{0};  // 0 = hardware concurrency
  return cap;
}
}  // namespace detail

/// Caps internal parallelism; 0 restores the hardware default.
inline void set_max_threads(int n) { detail::thread_cap().store(n < 0 ? 0 : n); }

inline int max_threads() {
  const int cap = detail::thread_cap().load();
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  const int base = hw > 0 ? hw : 1;
  return cap > 0 ? std::min(cap, base) : base;
}

/// Runs fn(begin, end) over fixed contiguous chunks of [0, n). Each chunk
/// writes only its own output slots, so results are identical at any
/// thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const int threads = std::min<std::size_t>(static_cast<std::size_t>(max_threads()), n);
  if (threads <= 1 || n < 256) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + static_cast<std::size_t>(threads) - 1) / static_cast<std::size_t>(threads);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    const std::size_t begin = static_cast<std::size_t>(t) * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace wgicp

#endif  // WGICP_RUNTIME_HPP
