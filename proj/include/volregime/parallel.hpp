#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace volregime {

/// Calls fn(i) for every i in [0, count) on up to `workers` threads. fn must
/// not throw and must write its result to a slot owned by index i.
template <class Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  const auto n_threads =
      static_cast<std::size_t>(std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), 1, std::max<std::size_t>(count, 1)));
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    });
}

}  // namespace volregime
