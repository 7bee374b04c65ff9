// SPDX-License-Identifier: Apache-2.0
#include "rna/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace rna {

std::size_t kernel_threads() {
  static const std::size_t threads = [] {
    const char* env = std::getenv("RNA_THREADS");
    if (!env) return std::size_t{1};
    try {
      long v = std::stol(env);
      return static_cast<std::size_t>(std::max(1L, v));
    } catch (...) {
      return std::size_t{1};
    }
  }();
  return threads;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min(kernel_threads(), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace rna
