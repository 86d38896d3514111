#pragma once

// Data-parallel inner kernels. Every kernel has a scalar reference
// implementation; AVX2+FMA (x86-64) and NEON (aarch64) variants are selected
// once at runtime. Set BAYESOC_SIMD=scalar to force the reference path.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace bayesoc::simd {

enum class Isa { scalar, avx2, neon };

struct KernelTable {
  Isa isa;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // sum_i weight[i] * table[index[i]]
  double (*gather_dot)(const std::int32_t* index, const double* weight,
                       const double* table, std::size_t n);
  // out[k] += scale * (value - means[k])^2
  void (*accumulate_sq_residual)(double* out, const double* means, double value,
                                 double scale, std::size_t n);
  // max_i x[i]; n >= 1
  double (*max_value)(const double* x, std::size_t n);
};

const KernelTable& scalar_kernels();
// nullptr when the variant was not compiled in or the CPU lacks the feature.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

const KernelTable& active_kernels();
std::string_view isa_name(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active_kernels().dot(a.data(), b.data(), a.size());
}

inline double gather_dot(std::span<const std::int32_t> index,
                         std::span<const double> weight, const double* table) {
  return active_kernels().gather_dot(index.data(), weight.data(), table,
                                     index.size());
}

inline void accumulate_sq_residual(std::span<double> out,
                                   std::span<const double> means, double value,
                                   double scale) {
  active_kernels().accumulate_sq_residual(out.data(), means.data(), value,
                                          scale, out.size());
}

inline double max_value(std::span<const double> x) {
  return active_kernels().max_value(x.data(), x.size());
}

}  // namespace bayesoc::simd
