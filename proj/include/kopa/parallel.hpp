#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

#include <omp.h>

namespace kopa {

/// OpenMP loop over [0, n) with static scheduling. The first exception thrown
/// by any iteration is rethrown on the calling thread once the loop ends.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

inline int worker_count() { return omp_get_max_threads(); }

}  // namespace kopa
