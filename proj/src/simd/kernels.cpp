#include "lightner/simd/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "lightner/error.hpp"

namespace lightner::simd {

#if !defined(LIGHTNER_HAVE_AVX2)
const KernelTable* avx2_kernels() { return nullptr; }
#endif

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(LIGHTNER_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return avx2_kernels() != nullptr && __builtin_cpu_supports("avx2") &&
             __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::kScalar;
  if (name == "avx2") return Isa::kAvx2;
  throw Error("SIMD_UNSUPPORTED", "unknown instruction set '" + std::string(name) + "'");
}

namespace {

const KernelTable* table_for(Isa isa) {
  if (!cpu_supports(isa))
    throw Error("SIMD_UNSUPPORTED", "instruction set not available on this CPU or build");
  return isa == Isa::kAvx2 ? avx2_kernels() : &scalar_kernels();
}

const KernelTable* initial_table() {
  if (const char* forced = std::getenv("LIGHTNER_SIMD"); forced != nullptr && *forced != '\0')
    return table_for(parse_isa(forced));
  return cpu_supports(Isa::kAvx2) ? avx2_kernels() : &scalar_kernels();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select(Isa isa) { current().store(table_for(isa), std::memory_order_release); }

}  // namespace lightner::simd
