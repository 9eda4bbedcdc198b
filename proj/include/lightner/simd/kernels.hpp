#pragma once

// Dense double-precision inner loops used by the tensor core.
//
// Each instruction set provides the same KernelTable. The scalar table is the
// reference; vector tables must agree with it up to floating-point
// reassociation (see tests/simd_equivalence_test.cpp). The active table is
// chosen once at startup from CPUID and can be forced with the environment
// variable LIGHTNER_SIMD=scalar|avx2 or with select().

#include <cstddef>
#include <string_view>

namespace lightner::simd {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  Isa isa;
  const char* name;

  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
  // C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
  // C[m x n] += A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
};

const KernelTable& scalar_kernels();

// nullptr when the build has no AVX2 translation unit (non-x86 targets).
const KernelTable* avx2_kernels();

bool cpu_supports(Isa isa);

// The table every tensor primitive dispatches through.
const KernelTable& active();

// Forces a table. Throws lightner::Error(SIMD_UNSUPPORTED) if the CPU or the
// build lacks it.
void select(Isa isa);

Isa parse_isa(std::string_view name);

}  // namespace lightner::simd
