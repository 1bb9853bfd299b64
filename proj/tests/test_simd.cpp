#include <doctest.h>

#include <cmath>
#include <vector>

#include "h4w/random.hpp"
#include "h4w/simd/kernels.hpp"

using namespace h4w;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1, 1);
  return v;
}

// Naive triple loop; ta/tb select A[K,M] / B[N,K] storage.
std::vector<double> oracle_gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
                                const std::vector<double>& a, const std::vector<double>& b, std::vector<double> c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p)
        s += static_cast<long double>(ta ? a[p * m + i] : a[i * k + p]) * (tb ? b[j * k + p] : b[p * n + j]);
      c[i * n + j] += static_cast<double>(s);
    }
  return c;
}

void check_close(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(std::abs(got[i] - want[i]) <= tol * (1.0 + std::abs(want[i])));
}

}  // namespace

TEST_CASE("scalar table is always available and listed first") {
  const auto tables = simd::available();
  REQUIRE(!tables.empty());
  CHECK(tables.front()->isa == simd::Isa::Scalar);
  CHECK(&simd::active() != nullptr);
}

TEST_CASE("every kernel table matches the naive oracle on ragged sizes") {
  Rng rng(11);
  const std::size_t sizes[][3] = {{1, 1, 1}, {3, 5, 7}, {4, 8, 16}, {5, 9, 3}, {13, 17, 31}, {32, 33, 9}, {7, 64, 1}};
  for (const simd::KernelTable* t : simd::available()) {
    CAPTURE(t->name);
    for (const auto& s : sizes) {
      const std::size_t m = s[0], n = s[1], k = s[2];
      const auto a = random_vec(rng, m * k), b = random_vec(rng, k * n), c0 = random_vec(rng, m * n);

      auto c = c0;
      t->gemm_nn(m, n, k, a.data(), k, b.data(), n, c.data(), n);
      check_close(c, oracle_gemm(false, false, m, n, k, a, b, c0), 1e-12);

      c = c0;
      t->gemm_tn(m, n, k, a.data(), m, b.data(), n, c.data(), n);
      check_close(c, oracle_gemm(true, false, m, n, k, a, b, c0), 1e-12);

      const auto bt = random_vec(rng, n * k);
      c = c0;
      t->gemm_nt(m, n, k, a.data(), k, bt.data(), k, c.data(), n);
      check_close(c, oracle_gemm(false, true, m, n, k, a, bt, c0), 1e-12);
    }
    for (std::size_t n : {0u, 1u, 3u, 8u, 15u, 100u}) {
      const auto x = random_vec(rng, n), y = random_vec(rng, n);
      long double want = 0;
      for (std::size_t i = 0; i < n; ++i) want += static_cast<long double>(x[i]) * y[i];
      CHECK(std::abs(t->dot(x.data(), y.data(), n) - static_cast<double>(want)) < 1e-12);
      auto z = y;
      t->axpy(0.75, x.data(), z.data(), n);
      for (std::size_t i = 0; i < n; ++i) CHECK(z[i] == doctest::Approx(y[i] + 0.75 * x[i]).epsilon(1e-15));
    }
  }
}

TEST_CASE("kernels honour leading dimensions larger than the logical width") {
  Rng rng(5);
  const std::size_t m = 5, n = 6, k = 7, lda = 11, ldb = 9, ldc = 10;
  const auto a = random_vec(rng, m * lda), b = random_vec(rng, k * ldb);
  for (const simd::KernelTable* t : simd::available()) {
    std::vector<double> c(m * ldc, 0.0);
    t->gemm_nn(m, n, k, a.data(), lda, b.data(), ldb, c.data(), ldc);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t p = 0; p < k; ++p) s += a[i * lda + p] * b[p * ldb + j];
        CHECK(c[i * ldc + j] == doctest::Approx(s).epsilon(1e-12));
      }
      for (std::size_t j = n; j < ldc; ++j) CHECK(c[i * ldc + j] == 0.0);
    }
  }
}

TEST_CASE("SIMD and scalar paths agree on the same inputs") {
  const auto tables = simd::available();
  if (tables.size() < 2) return;
  Rng rng(3);
  const std::size_t m = 37, n = 29, k = 45;
  const auto a = random_vec(rng, m * k), b = random_vec(rng, k * n);
  std::vector<double> c0(m * n, 0.0), c1(m * n, 0.0);
  tables[0]->gemm_nn(m, n, k, a.data(), k, b.data(), n, c0.data(), n);
  tables[1]->gemm_nn(m, n, k, a.data(), k, b.data(), n, c1.data(), n);
  check_close(c1, c0, 1e-13);
}
