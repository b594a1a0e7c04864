// SPDX-License-Identifier: Apache-2.0
/**
 * @file   parallel.hpp
 * @brief  Index-parallel loop with a fixed work assignment.
 *
 * Callers write results into per-index slots and reduce them afterwards in
 * ascending index order, so the thread count never changes any result bit.
 */
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace fedlm {

/// Worker count from FEDLM_THREADS, falling back to 1.
inline unsigned threads_from_env() {
  if (const char *env = std::getenv("FEDLM_THREADS")) {
    try {
      const long n = std::stol(env);
      if (n > 0)
        return static_cast<unsigned>(n);
    } catch (...) {
    }
  }
  return 1;
}

template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn &&fn) {
  const std::size_t workers =
      std::min<std::size_t>(std::max(1u, threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers)
            fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure)
            failure = std::current_exception();
        }
      });
    }
  }
  if (failure)
    std::rethrow_exception(failure);
}

} // namespace fedlm
