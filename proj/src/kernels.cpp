#include "ul/kernels.hpp"

#include <atomic>
#include <cstddef>

#include "ul/exec.hpp"

namespace ul::exec {

namespace {
std::atomic<bool> g_parallel{true};
}

void set_parallel(bool on) { g_parallel.store(on); }
bool parallel() { return g_parallel.load(); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace ul::exec

namespace ul::kernels {

namespace {

// One output row of c = a * b; accumulation order is fixed (l ascending),
// so the parallel version splits rows without changing any row's result.
inline void row_mm(const double* a, const double* b, double* c, int i, int k, int n) {
  double* cr = c + static_cast<std::size_t>(i) * n;
  const double* ar = a + static_cast<std::size_t>(i) * k;
  for (int j = 0; j < n; ++j) cr[j] = 0.0;
  for (int l = 0; l < k; ++l) {
    double av = ar[l];
    const double* br = b + static_cast<std::size_t>(l) * n;
    for (int j = 0; j < n; ++j) cr[j] += av * br[j];
  }
}

inline void row_mm_nt(const double* a, const double* b, double* c, int i, int k, int n) {
  double* cr = c + static_cast<std::size_t>(i) * n;
  const double* ar = a + static_cast<std::size_t>(i) * k;
  for (int j = 0; j < n; ++j) {
    const double* br = b + static_cast<std::size_t>(j) * k;
    double s = 0.0;
    for (int l = 0; l < k; ++l) s += ar[l] * br[l];
    cr[j] = s;
  }
}

// Row l of c = a^T * b, i.e. c[l,:] = sum_i a[i,l] * b[i,:].
inline void row_mm_tn(const double* a, const double* b, double* c, int l, int m,
                      int k, int n) {
  double* cr = c + static_cast<std::size_t>(l) * n;
  for (int j = 0; j < n; ++j) cr[j] = 0.0;
  for (int i = 0; i < m; ++i) {
    double av = a[static_cast<std::size_t>(i) * k + l];
    const double* br = b + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) cr[j] += av * br[j];
  }
}

}  // namespace

void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) row_mm(a, b, c, i, k, n);
}

void matmul_omp(const double* a, const double* b, double* c, int m, int k, int n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int i = 0; i < m; ++i) row_mm(a, b, c, i, k, n);
}

void matmul_nt_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) row_mm_nt(a, b, c, i, k, n);
}

void matmul_nt_omp(const double* a, const double* b, double* c, int m, int k, int n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int i = 0; i < m; ++i) row_mm_nt(a, b, c, i, k, n);
}

void matmul_tn_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int l = 0; l < k; ++l) row_mm_tn(a, b, c, l, m, k, n);
}

void matmul_tn_omp(const double* a, const double* b, double* c, int m, int k, int n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int l = 0; l < k; ++l) row_mm_tn(a, b, c, l, m, k, n);
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  if (exec::parallel())
    matmul_omp(a, b, c, m, k, n);
  else
    matmul_serial(a, b, c, m, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  if (exec::parallel())
    matmul_nt_omp(a, b, c, m, k, n);
  else
    matmul_nt_serial(a, b, c, m, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  if (exec::parallel())
    matmul_tn_omp(a, b, c, m, k, n);
  else
    matmul_tn_serial(a, b, c, m, k, n);
}

}  // namespace ul::kernels
