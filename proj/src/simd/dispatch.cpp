#include <cstdlib>
#include <string_view>

#include "bayesoc/simd.hpp"

namespace bayesoc::simd {

#if defined(BAYESOC_HAVE_AVX2)
const KernelTable& avx2_kernel_table();
#endif
#if defined(BAYESOC_HAVE_NEON)
const KernelTable& neon_kernel_table();
#endif

const KernelTable* avx2_kernels() {
#if defined(BAYESOC_HAVE_AVX2)
  static const bool supported =
      __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2_kernel_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_kernels() {
#if defined(BAYESOC_HAVE_NEON)
  return &neon_kernel_table();
#else
  return nullptr;
#endif
}

const KernelTable& active_kernels() {
  static const KernelTable& chosen = []() -> const KernelTable& {
    const char* env = std::getenv("BAYESOC_SIMD");
    if (env != nullptr && std::string_view(env) == "scalar") return scalar_kernels();
    if (const KernelTable* t = avx2_kernels()) return *t;
    if (const KernelTable* t = neon_kernels()) return *t;
    return scalar_kernels();
  }();
  return chosen;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
    case Isa::scalar: break;
  }
  return "scalar";
}

}  // namespace bayesoc::simd
