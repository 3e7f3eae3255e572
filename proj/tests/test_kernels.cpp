#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ul/exec.hpp"
#include "ul/kernels.hpp"
#include "ul/rng.hpp"

using namespace ul;

namespace {

std::vector<double> rand_mat(Rng& r, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = r.normal();
  return v;
}

// Independent reference: plain i-j-l triple loop.
void naive_mm(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += a[i * k + l] * b[l * n + j];
      c[i * n + j] = s;
    }
}

bool bytes_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("identity times matrix returns the matrix") {
  std::vector<double> eye = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::vector<double> a = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<double> c(9, -1.0);
  kernels::matmul_serial(eye.data(), a.data(), c.data(), 3, 3, 3);
  CHECK(bytes_equal(a, c));
}

TEST_CASE("matmul matches naive triple loop within fp noise") {
  Rng r(3);
  int m = 7, k = 11, n = 5;
  auto a = rand_mat(r, m * k), b = rand_mat(r, k * n);
  std::vector<double> c1(m * n), c2(m * n);
  kernels::matmul_serial(a.data(), b.data(), c1.data(), m, k, n);
  naive_mm(a.data(), b.data(), c2.data(), m, k, n);
  for (int i = 0; i < m * n; ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
}

TEST_CASE("nt and tn variants match naive formulations") {
  Rng r(4);
  int m = 6, k = 9, n = 4;
  auto a = rand_mat(r, m * k);
  auto bt = rand_mat(r, n * k);  // b stored (n x k) for nt
  std::vector<double> c(m * n);
  kernels::matmul_nt_serial(a.data(), bt.data(), c.data(), m, k, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += a[i * k + l] * bt[j * k + l];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-12));
    }

  auto b2 = rand_mat(r, m * n);
  std::vector<double> ct(k * n);
  kernels::matmul_tn_serial(a.data(), b2.data(), ct.data(), m, k, n);
  for (int l = 0; l < k; ++l)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < m; ++i) s += a[i * k + l] * b2[i * n + j];
      CHECK(ct[l * n + j] == doctest::Approx(s).epsilon(1e-10));
    }
}

TEST_CASE("omp kernels are bit-identical to serial at any thread count") {
#ifdef _OPENMP
  omp_set_num_threads(4);
#endif
  Rng r(9);
  for (int trial = 0; trial < 5; ++trial) {
    int m = 3 + r.uniform_int(40);
    int k = 3 + r.uniform_int(40);
    int n = 3 + r.uniform_int(40);
    auto a = rand_mat(r, m * k), b = rand_mat(r, k * n);
    std::vector<double> cs(m * n), cp(m * n);
    kernels::matmul_serial(a.data(), b.data(), cs.data(), m, k, n);
    kernels::matmul_omp(a.data(), b.data(), cp.data(), m, k, n);
    CHECK(bytes_equal(cs, cp));

    auto bt = rand_mat(r, n * k);
    std::vector<double> ds(m * n), dp(m * n);
    kernels::matmul_nt_serial(a.data(), bt.data(), ds.data(), m, k, n);
    kernels::matmul_nt_omp(a.data(), bt.data(), dp.data(), m, k, n);
    CHECK(bytes_equal(ds, dp));

    auto b2 = rand_mat(r, m * n);
    std::vector<double> es(k * n), ep(k * n);
    kernels::matmul_tn_serial(a.data(), b2.data(), es.data(), m, k, n);
    kernels::matmul_tn_omp(a.data(), b2.data(), ep.data(), m, k, n);
    CHECK(bytes_equal(es, ep));
  }
}

TEST_CASE("dispatcher honors the exec mode switch") {
  bool prev = exec::parallel();
  exec::set_parallel(false);
  CHECK_FALSE(exec::parallel());
  exec::set_parallel(true);
  CHECK(exec::parallel());
  exec::set_parallel(prev);
}

TEST_CASE("ordered_sample_reduce folds in index order regardless of mode") {
  for (bool par : {false, true}) {
    exec::set_parallel(par);
    std::vector<int> order;
    std::function<int(int)> compute = [](int i) { return i * i; };
    std::function<void(int, int&&)> fold = [&](int i, int&& v) {
      CHECK(v == i * i);
      order.push_back(i);
    };
    exec::ordered_sample_reduce<int>(37, compute, fold, 8);
    REQUIRE(order.size() == 37);
    for (int i = 0; i < 37; ++i) CHECK(order[i] == i);
  }
  exec::set_parallel(true);
}

TEST_CASE("ordered_sample_reduce propagates exceptions") {
  std::function<int(int)> compute = [](int i) -> int {
    if (i == 5) throw std::runtime_error("boom");
    return i;
  };
  std::function<void(int, int&&)> fold = [](int, int&&) {};
  CHECK_THROWS(exec::ordered_sample_reduce<int>(10, compute, fold, 4));
}
