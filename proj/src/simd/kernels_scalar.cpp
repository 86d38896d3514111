#include "bayesoc/simd.hpp"

namespace bayesoc::simd {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double gather_dot_scalar(const std::int32_t* index, const double* weight,
                         const double* table, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += weight[i] * table[index[i]];
  return acc;
}

void accumulate_sq_residual_scalar(double* out, const double* means,
                                   double value, double scale, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    const double r = value - means[k];
    out[k] += scale * r * r;
  }
}

double max_value_scalar(const double* x, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::scalar, dot_scalar, gather_dot_scalar,
                                 accumulate_sq_residual_scalar,
                                 max_value_scalar};
  return table;
}

}  // namespace bayesoc::simd
