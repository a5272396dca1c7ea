#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace xmr {

/// Number of worker threads to use when the caller passes 0.
inline std::size_t default_jobs() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Calls fn(i) for i in [0, n) on up to `jobs` threads with a static
/// contiguous partition. If any call throws, the exception from the lowest
/// failing index is rethrown after all workers join.
inline void parallel_for(std::size_t n, std::size_t jobs,
                         const std::function<void(std::size_t)>& fn) {
  if (jobs == 0) jobs = default_jobs();
  if (jobs > n) jobs = n;
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(jobs);
  {
    std::vector<std::jthread> workers;
    workers.reserve(jobs);
    for (std::size_t w = 0; w < jobs; ++w) {
      const std::size_t begin = n * w / jobs;
      const std::size_t end = n * (w + 1) / jobs;
      workers.emplace_back([&, w, begin, end] {
        for (std::size_t i = begin; i < end; ++i) {
          try {
            fn(i);
          } catch (...) {
            errors[w] = std::current_exception();
            return;
          }
        }
      });
    }
  }
  // Partitions are ordered, so the first worker with an error holds the
  // lowest failing index.
  for (std::size_t w = 0; w < jobs; ++w) {
    if (errors[w]) std::rethrow_exception(errors[w]);
  }
}

}  // namespace xmr
