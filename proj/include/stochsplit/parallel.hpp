#pragma once

#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace stochsplit {

/// Environment variable that caps the worker count everywhere.
inline constexpr const char* kThreadsEnv = "STOCHSPLIT_THREADS";

/// Clamp a requested worker count to [1, env cap]. A request of 0 means
/// "use the hardware concurrency".
int resolve_threads(int requested);

/// Run fn(i) for every i in [0, count) on up to `threads` workers. Each index
/// is visited exactly once; results must be written to per-index slots so the
/// outcome is independent of scheduling. The first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const int workers = resolve_threads(threads);
  if (workers <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const auto nworkers = static_cast<std::size_t>(workers) < count ? static_cast<std::size_t>(workers) : count;
  pool.reserve(nworkers);
  for (std::size_t w = 0; w < nworkers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += nworkers) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace stochsplit
