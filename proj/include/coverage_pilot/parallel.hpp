#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace cpilot {

/// Runs work(i) for i in [0, n) on up to `jobs` threads and hands each result to emit(i, r)
/// in increasing i, from the calling thread. With jobs <= 1 everything runs inline.
/// The first exception thrown by work or emit stops scheduling and is rethrown.
template <typename Result>
void parallel_ordered(std::size_t n, int jobs, const std::function<Result(std::size_t)>& work,
                      const std::function<void(std::size_t, Result&&)>& emit) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) emit(i, work(i));
    return;
  }
  std::vector<std::optional<Result>> slots(n);
  std::mutex mu;
  std::condition_variable ready;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;

  auto worker = [&] {
    for (std::size_t i = next++; i < n && !stop; i = next++) {
      try {
        Result r = work(i);
        std::lock_guard lock(mu);
        slots[i].emplace(std::move(r));
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        stop = true;
      }
      ready.notify_all();
    }
  };
  std::vector<std::thread> pool;
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);

  try {
    for (std::size_t i = 0; i < n; ++i) {
      Result r;
      {
        std::unique_lock lock(mu);
        ready.wait(lock, [&] { return slots[i].has_value() || failure; });
        if (!slots[i]) break;
        r = std::move(*slots[i]);
        slots[i].reset();
      }
      emit(i, std::move(r));
    }
  } catch (...) {
    std::lock_guard lock(mu);
    if (!failure) failure = std::current_exception();
    stop = true;
  }
  stop = true;
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace cpilot
