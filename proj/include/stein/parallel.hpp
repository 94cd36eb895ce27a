#pragma once

#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "stein/types.hpp"

namespace stein {

inline int hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

/// Runs fn(i) for i in [0, n). Each index must write only to its own
/// output slot; results are then identical for any thread count.
inline void parallel_for(Index n, int threads,
                         const std::function<void(Index)>& fn) {
  if (n <= 0) return;
  if (threads <= 1 || n == 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  const int nw = static_cast<int>(std::min<Index>(threads, n));
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(nw));
  for (int w = 0; w < nw; ++w) {
    workers.emplace_back([&, w]() {
      try {
        for (Index i = w; i < n; i += nw) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace stein
