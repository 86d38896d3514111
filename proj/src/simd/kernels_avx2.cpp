// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include <immintrin.h>

#include "bayesoc/simd.hpp"

namespace bayesoc::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                           _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double gather_dot_avx2(const std::int32_t* index, const double* weight,
                       const double* table, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m128i idx =
        _mm_loadu_si128(reinterpret_cast<const __m128i*>(index + i));
    const __m256d t = _mm256_i32gather_pd(table, idx, 8);
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(weight + i), t, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += weight[i] * table[index[i]];
  return s;
}

void accumulate_sq_residual_avx2(double* out, const double* means, double value,
                                 double scale, std::size_t n) {
  const __m256d v = _mm256_set1_pd(value);
  const __m256d sc = _mm256_set1_pd(scale);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d r = _mm256_sub_pd(v, _mm256_loadu_pd(means + k));
    const __m256d o = _mm256_loadu_pd(out + k);
    _mm256_storeu_pd(out + k, _mm256_fmadd_pd(_mm256_mul_pd(sc, r), r, o));
  }
  for (; k < n; ++k) {
    const double r = value - means[k];
    out[k] += scale * r * r;
  }
}

double max_value_avx2(const double* x, std::size_t n) {
  std::size_t i = 0;
  double m = x[0];
  if (n >= 4) {
    __m256d acc = _mm256_loadu_pd(x);
    for (i = 4; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    m = lanes[0];
    for (int l = 1; l < 4; ++l) m = lanes[l] > m ? lanes[l] : m;
  }
  for (; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

}  // namespace

const KernelTable& avx2_kernel_table() {
  static const KernelTable table{Isa::avx2, dot_avx2, gather_dot_avx2,
                                 accumulate_sq_residual_avx2, max_value_avx2};
  return table;
}

}  // namespace bayesoc::simd
