#pragma once

#include <exception>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ul::exec {

// Global switch between the serial reference path and the OpenMP path.
// Both produce bit-identical results; tests and the benchmark flip this.
void set_parallel(bool on);
bool parallel();

int max_threads();

// Runs compute(i) for i in [0,n), possibly in parallel, then folds results
// strictly in index order. Memory stays bounded at `block` outputs.
// Exceptions thrown by compute are captured and rethrown on the calling
// thread after the parallel region ends.
template <typename Out>
void ordered_sample_reduce(int n, const std::function<Out(int)>& compute,
                           const std::function<void(int, Out&&)>& fold,
                           int block = 16) {
  if (n <= 0) return;
  if (!parallel()) {
    for (int i = 0; i < n; ++i) fold(i, compute(i));
    return;
  }
  std::vector<Out> buf(static_cast<std::size_t>(block));
  std::exception_ptr err;
  for (int base = 0; base < n; base += block) {
    int m = std::min(block, n - base);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int k = 0; k < m; ++k) {
      try {
        buf[static_cast<std::size_t>(k)] = compute(base + k);
      } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
        {
          if (!err) err = std::current_exception();
        }
      }
    }
    if (err) std::rethrow_exception(err);
    for (int k = 0; k < m; ++k)
      fold(base + k, std::move(buf[static_cast<std::size_t>(k)]));
  }
}

}  // namespace ul::exec
