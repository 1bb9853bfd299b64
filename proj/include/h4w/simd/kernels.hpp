#pragma once

// Dense inner-loop kernels behind conv2d and fully-connected layers.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2+FMA
// variant compiled in its own translation unit. The variant is picked once at
// startup from CPUID; H4W_SIMD=scalar forces the reference path. Results of
// the two paths agree to rounding (FMA and lane-wise summation reorder adds),
// and each path is deterministic on its own.
//
// Matrices are row-major with explicit leading dimensions. All gemm variants
// accumulate into C.

#include <cstddef>
#include <string_view>
#include <vector>

namespace h4w::simd {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
  Isa isa;
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[M,N] += A[M,K] * B[K,N]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
  // C[M,N] += A[K,M]^T * B[K,N]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
  // C[M,N] += A[M,K] * B[N,K]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
};

const KernelTable& scalar_kernels();

// nullptr when the variant was not compiled in or the CPU lacks the features.
const KernelTable* avx2_kernels();

// Table selected for this process (first call decides).
const KernelTable& active();

// Every table usable on this machine, scalar first.
std::vector<const KernelTable*> available();

}  // namespace h4w::simd
