#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <type_traits>
#include <vector>

#include "lvqa/error.hpp"

namespace lvqa {

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_delay{100};
  double multiplier = 2.0;
};

/// Retry statistics accumulated across calls; safe to share between threads.
struct RetryCounters {
  std::atomic<long> calls{0};
  std::atomic<long> retries{0};
  std::atomic<long> failures{0};
};

/// Runs `fn`, retrying retryable backend errors with exponential backoff.
template <typename Fn>
auto with_retry(const RetryPolicy& policy, Fn&& fn, RetryCounters* counters = nullptr) -> decltype(fn()) {
  auto delay = policy.initial_delay;
  for (int attempt = 1;; ++attempt) {
    if (counters) ++counters->calls;
    try {
      return fn();
    } catch (const BackendError& e) {
      if (!e.retryable() || attempt >= policy.max_attempts) {
        if (counters) ++counters->failures;
        throw;
      }
      if (counters) ++counters->retries;
      std::this_thread::sleep_for(delay);
      delay = std::chrono::milliseconds(static_cast<long>(delay.count() * policy.multiplier));
    }
  }
}

/// Evaluates fn(0..n-1) on at most `parallelism` threads. Results come back
/// in index order regardless of completion order. The first exception (by
/// index) is rethrown after all workers stop.
template <typename Fn>
auto parallel_map(size_t n, size_t parallelism, Fn&& fn) -> std::vector<std::invoke_result_t<Fn&, size_t>> {
  using R = std::invoke_result_t<Fn&, size_t>;
  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<size_t> next{0};
  std::atomic<bool> stop{false};
  auto worker = [&] {
    for (size_t i; !stop && (i = next++) < n;) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
        stop = true;
      }
    }
  };
  const size_t threads = std::clamp<size_t>(parallelism, 1, std::max<size_t>(n, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace lvqa
