#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "diracdos/common.hpp"

namespace diracdos::cli {

// Workers pull cell ids from a shared counter. Every cell writes into its own slot of a
// pre-sized table, so completion order never reaches the output.
inline ParallelFor thread_pool(std::size_t jobs) {
  if (jobs <= 1) return default_executor();
  return [jobs](std::size_t count, const std::function<void(std::size_t)>& task) {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
      while (!stop.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          task(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          stop.store(true);
        }
      }
    };
    std::vector<std::thread> pool;
    const std::size_t n = std::min(jobs, count);
    pool.reserve(n);
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  };
}

// DIRAC_DOS_JOBS, or 1 when unset.
inline std::size_t default_jobs() {
  const char* env = std::getenv("DIRAC_DOS_JOBS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1 || v > 1024)
    throw ValidationError(std::string("DIRAC_DOS_JOBS must be an integer in 1..1024, got '") + env + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace diracdos::cli
