#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace aeromtl {

/// Runs body(begin, end) over contiguous chunks of [0, n) on up to `threads` threads.
/// Chunks are disjoint, so bodies that only write their own rows need no locking.
template <typename Body>
void parallel_for(std::size_t n, int threads, Body&& body) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2 * workers) {
    body(std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::jthread> pool;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
}

}  // namespace aeromtl
