#include <omp.h>

#include <cstdio>
#include <vector>

#include "ul/datagen.hpp"
#include "ul/exec.hpp"
#include "ul/kernels.hpp"
#include "ul/rng.hpp"
#include "ul/unlearn.hpp"

using namespace ul;

namespace {

double bench_matmul(bool parallel, int size, int reps) {
  Rng rng(11);
  std::vector<double> a(size * size), b(size * size), c(size * size);
  for (double& v : a) v = rng.normal();
  for (double& v : b) v = rng.normal();
  exec::set_parallel(parallel);
  double t0 = omp_get_wtime();
  for (int r = 0; r < reps; ++r) kernels::matmul(a.data(), b.data(), c.data(), size, size, size);
  return omp_get_wtime() - t0;
}

double bench_batch_grad(bool parallel, int reps) {
  DatagenConfig dc;
  dc.n_concepts = 8;
  ModelConfig mc;
  mc.d_vision = 16;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.vocab_size = Vocab::build(dc).size();
  Dataset d = build_dataset(dc, 3);
  ToyMLLM m = ToyMLLM::init(mc, 4);
  std::vector<int> batch = all_indices(d);
  batch.resize(32);
  exec::set_parallel(parallel);
  double t0 = omp_get_wtime();
  for (int r = 0; r < reps; ++r) batch_nll(m, d, batch);
  return omp_get_wtime() - t0;
}

}  // namespace

int main() {
  std::printf("threads available: %d\n", omp_get_max_threads());
  std::printf("%-28s %10s %10s %8s\n", "benchmark", "serial s", "openmp s", "speedup");

  double s = bench_matmul(false, 192, 20);
  double p = bench_matmul(true, 192, 20);
  std::printf("%-28s %10.4f %10.4f %7.2fx\n", "matmul 192x192 x20", s, p, s / p);

  s = bench_batch_grad(false, 6);
  p = bench_batch_grad(true, 6);
  std::printf("%-28s %10.4f %10.4f %7.2fx\n", "batch gradient 32 items x6", s, p, s / p);

  exec::set_parallel(true);
  return 0;
}
