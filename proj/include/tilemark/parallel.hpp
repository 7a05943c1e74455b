#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace tilemark {

// Worker cap from TILEMARK_THREADS (a positive integer), else the hardware
// concurrency. ConfigError on a malformed value.
int worker_count();

// Runs f(i) for i in [0, n) on up to `workers` threads, strided by index.
// If any call throws, the exception of the lowest failing index is
// rethrown after all workers finish.
template <typename F>
void parallel_for(std::size_t n, int workers, F f) {
  const std::size_t w = std::max<std::size_t>(1, std::min<std::size_t>(workers, n));
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t start) {
    for (std::size_t i = start; i < n; i += w) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (w == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < w; ++t) threads.emplace_back(run, t);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace tilemark
