#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <limits>
#include <random>
#include <string_view>
#include <vector>

#include "bayesoc/simd.hpp"
#include "fixtures.hpp"

using namespace bayesoc;
namespace simd = bayesoc::simd;

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

std::vector<const simd::KernelTable*> variants() {
  std::vector<const simd::KernelTable*> out;
  if (const auto* t = simd::avx2_kernels()) out.push_back(t);
  if (const auto* t = simd::neon_kernels()) out.push_back(t);
  return out;
}

}  // namespace

TEST_CASE("vector kernels match the scalar reference") {
  const auto& ref = simd::scalar_kernels();
  const auto vs = variants();
  MESSAGE("active kernels: " << simd::isa_name(simd::active_kernels().isa) << ", variants under test: " << vs.size());
  Rng rng(123);
  std::normal_distribution<double> n01;
  std::uniform_int_distribution<std::int32_t> pick(0, 499);
  std::vector<double> table(500);
  for (double& x : table) x = n01(rng);

  for (const auto* v : vs) {
    for (std::size_t n = 0; n <= 70; ++n) {
      for (std::size_t offset : {0u, 1u, 3u}) {
        std::vector<double> a(n + offset), b(n + offset), w(n + offset);
        std::vector<std::int32_t> idx(n + offset);
        for (std::size_t i = 0; i < n + offset; ++i) {
          a[i] = n01(rng);
          b[i] = n01(rng);
          w[i] = std::abs(n01(rng));
          idx[i] = pick(rng);
        }
        const double* pa = a.data() + offset;
        const double* pb = b.data() + offset;
        double mag = 0.0;
        for (std::size_t i = 0; i < n; ++i) mag += std::abs(pa[i] * pb[i]);
        const double bound = 4.0 * static_cast<double>(n + 1) * kEps * mag;
        CHECK(std::abs(v->dot(pa, pb, n) - ref.dot(pa, pb, n)) <= bound);

        double gmag = 0.0;
        for (std::size_t i = 0; i < n; ++i) gmag += std::abs(w[offset + i] * table[idx[offset + i]]);
        CHECK(std::abs(v->gather_dot(idx.data() + offset, w.data() + offset, table.data(), n) -
                       ref.gather_dot(idx.data() + offset, w.data() + offset, table.data(), n)) <=
              4.0 * static_cast<double>(n + 1) * kEps * gmag);

        std::vector<double> out_v(a.begin() + offset, a.end()), out_r = out_v;
        v->accumulate_sq_residual(out_v.data(), pb, 0.37, -0.5, n);
        ref.accumulate_sq_residual(out_r.data(), pb, 0.37, -0.5, n);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(out_v[i] - out_r[i]) <= 4.0 * kEps * (std::abs(out_r[i]) + 1.0));

        if (n > 0) CHECK(v->max_value(pa, n) == ref.max_value(pa, n));
      }
    }
  }
}

TEST_CASE("max kernel handles extreme values") {
  std::vector<double> x{-1e308, -std::numeric_limits<double>::infinity(), -3.0, -1e308, -2.0, -7.0, -9.0, -1.5, -8.0};
  for (const auto* v : variants()) {
    for (std::size_t n = 1; n <= x.size(); ++n) CHECK(v->max_value(x.data(), n) == simd::scalar_kernels().max_value(x.data(), n));
  }
}

TEST_CASE("dispatch honours BAYESOC_SIMD") {
  const char* env = std::getenv("BAYESOC_SIMD");
  if (env != nullptr && std::string_view(env) == "scalar") {
    CHECK(simd::active_kernels().isa == simd::Isa::scalar);
  } else if (!variants().empty()) {
    CHECK(simd::active_kernels().isa != simd::Isa::scalar);
  }
}

TEST_CASE("end-to-end solve and posterior are kernel independent") {
  // Run under both dispatch settings by ctest; the reference numbers are the same.
  const auto sc = fixtures::canonical();
  const auto& p = sc.problem;
  const auto res = value_iteration(p, TrueOperator{sc.theta_star});
  CHECK(res.values(0, 0) == doctest::Approx(17.6177229979).epsilon(1e-10));
  CHECK(res.report.iterations == 226);
  const auto data = generate_dataset(p.chain(), p.model(), sc.theta_star, 400, 10);
  const auto post = posterior_update_batch(PriorSpec::uniform(), grid_spec(sc, 41), p.model(), p.chain(), data);
  // oracle: direct log-density sums per node
  double worst = 0.0;
  std::vector<double> direct(post.size());
  for (std::size_t k = 0; k < post.size(); ++k) direct[k] = 400.0 * empirical_loglik(p.model(), p.chain(), data, post.theta(k));
  const double m = *std::max_element(direct.begin(), direct.end());
  double z = 0.0;
  for (double d : direct) z += std::exp(d - m);
  for (std::size_t k = 0; k < post.size(); ++k) worst = std::max(worst, std::abs(post.log_weights()[k] - (direct[k] - m - std::log(z))));
  CHECK(worst < 1e-9);
}
