#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace dhedge {

// Runs fn(i) for i in [0, n) on up to `jobs` threads (0 = hardware
// concurrency). Results are written by index, so output order never depends
// on scheduling. The first exception thrown is rethrown on the caller.
template <class Fn>
auto parallel_map(std::size_t n, std::size_t jobs, Fn&& fn) {
  using R = decltype(fn(std::size_t{}));
  std::vector<R> out(n);
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          out[i] = fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace dhedge
