#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace wmcir {

/// Runs fn(i) for i in [0, n) on up to `workers` threads, item i on thread
/// i % workers. The first exception (by thread) is rethrown after joining.
template <typename F>
void parallel_for(int n, int workers, F&& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace wmcir
