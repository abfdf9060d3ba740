#ifndef KSPOC_PARALLEL_HPP
#define KSPOC_PARALLEL_HPP

#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>

namespace kspoc {

// Worker count: explicit value if > 0, else KSPOC_THREADS from the environment, else 1.
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("KSPOC_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

// Runs fn(i) for i in [0, n) on `threads` workers with a static schedule. Each index must
// write only its own outputs. If any call throws, the exception with the smallest index
// is rethrown after the loop, so error reporting does not depend on scheduling.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  std::exception_ptr first_error;
  std::size_t first_index = n;
  std::mutex guard;
#pragma omp parallel for num_threads(threads < 1 ? 1 : threads) schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(n); ++k) {
    try {
      fn(static_cast<std::size_t>(k));
    } catch (...) {
      std::lock_guard lock(guard);
      if (static_cast<std::size_t>(k) < first_index) {
        first_index = static_cast<std::size_t>(k);
        first_error = std::current_exception();
      }
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace kspoc

#endif  // KSPOC_PARALLEL_HPP
