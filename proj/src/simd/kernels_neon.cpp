// aarch64 only; the build adds this file when targeting arm64.

#include <arm_neon.h>

#include "bayesoc/simd.hpp"

namespace bayesoc::simd {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vfmaq_f64(acc, vld1q_f64(a + i), vld1q_f64(b + i));
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double gather_dot_neon(const std::int32_t* index, const double* weight,
                       const double* table, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const double g[2] = {table[index[i]], table[index[i + 1]]};
    acc = vfmaq_f64(acc, vld1q_f64(weight + i), vld1q_f64(g));
  }
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += weight[i] * table[index[i]];
  return s;
}

void accumulate_sq_residual_neon(double* out, const double* means, double value,
                                 double scale, std::size_t n) {
  const float64x2_t v = vdupq_n_f64(value);
  const float64x2_t sc = vdupq_n_f64(scale);
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) {
    const float64x2_t r = vsubq_f64(v, vld1q_f64(means + k));
    vst1q_f64(out + k, vfmaq_f64(vld1q_f64(out + k), vmulq_f64(sc, r), r));
  }
  for (; k < n; ++k) {
    const double r = value - means[k];
    out[k] += scale * r * r;
  }
}

double max_value_neon(const double* x, std::size_t n) {
  std::size_t i = 0;
  double m = x[0];
  if (n >= 2) {
    float64x2_t acc = vld1q_f64(x);
    for (i = 2; i + 2 <= n; i += 2) acc = vmaxq_f64(acc, vld1q_f64(x + i));
    m = vmaxvq_f64(acc);
  }
  for (; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

}  // namespace

const KernelTable& neon_kernel_table() {
  static const KernelTable table{Isa::neon, dot_neon, gather_dot_neon,
                                 accumulate_sq_residual_neon, max_value_neon};
  return table;
}

}  // namespace bayesoc::simd
