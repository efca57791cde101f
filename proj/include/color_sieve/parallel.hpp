#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace color_sieve {

/// Requested worker count, capped by COLOR_SIEVE_WORKERS when it is set.
std::size_t effective_workers(std::size_t requested);

/// Runs fn(shard_begin, shard_end) over `workers` contiguous shards of
/// [0, count). Shard boundaries depend only on (count, workers). The first
/// exception thrown by any shard is rethrown after all shards finish.
template <typename Fn>
void parallel_shards(std::size_t count, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    if (count > 0) fn(std::size_t{0}, count);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&](std::size_t begin, std::size_t end) {
    try {
      fn(begin, end);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };
  {
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    const std::size_t base = count / workers;
    const std::size_t extra = count % workers;
    std::size_t begin = 0;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t end = begin + base + (w < extra ? 1 : 0);
      threads.emplace_back(run, begin, end);
      begin = end;
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace color_sieve
