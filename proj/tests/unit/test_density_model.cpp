#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "bayesoc/context_chain.hpp"
#include "bayesoc/density_model.hpp"
#include "bayesoc/error.hpp"
#include "bayesoc/quadrature.hpp"
#include "bayesoc/rng.hpp"

using namespace bayesoc;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Eigen::MatrixXd eye(int d) { return Eigen::MatrixXd::Identity(d, d); }

}  // namespace

TEST_CASE("flat layout round trip") {
  ModelParameter p;
  p.A.resize(2, 3);
  p.A << 1, 2, 3, 4, 5, 6;
  p.b = vec({7, 8});
  const auto f = p.flat();
  CHECK(f == vec({1, 2, 3, 4, 5, 6, 7, 8}));
  const auto q = ModelParameter::from_flat(f, 2, 3);
  CHECK(q.A == p.A);
  CHECK(q.b == p.b);
  CHECK_THROWS_AS(ModelParameter::from_flat(vec({1, 2}), 2, 3), ValidationError);
}

TEST_CASE("log density") {
  GaussianRegressionModel m(1, eye(1));
  const auto theta = vec({0, 0});
  CHECK(m.log_density(theta, vec({0}), vec({1})) == doctest::Approx(-0.5 * kLog2Pi).epsilon(1e-14));
  CHECK(m.log_density(theta, vec({1}), vec({1})) == doctest::Approx(-0.5 * kLog2Pi - 0.5).epsilon(1e-14));

  Eigen::MatrixXd s(2, 2);
  s << 1, 0, 0, 4;
  GaussianRegressionModel m2(1, s);
  // residual (0, 2): quadratic form 4/4 = 1
  const double want = -kLog2Pi - 0.5 * std::log(4.0) - 0.5;
  CHECK(m2.log_density(Eigen::VectorXd::Zero(4), vec({0, 2}), vec({1})) == doctest::Approx(want).epsilon(1e-14));

  CHECK_THROWS_AS(m.log_density(theta, vec({0, 1}), vec({1})), ValidationError);
  CHECK_THROWS_AS(m.log_density(vec({0}), vec({0}), vec({1})), ValidationError);
}

TEST_CASE("constructor rejects non positive definite sigma") {
  CHECK_THROWS_AS(GaussianRegressionModel(1, Eigen::MatrixXd::Zero(1, 1)), ValidationError);
  Eigen::MatrixXd s(2, 2);
  s << 1, 2, 2, 1;
  CHECK_THROWS_AS(GaussianRegressionModel(1, s), ValidationError);
  s << 1, 0.5, 0.2, 1;
  CHECK_THROWS_AS(GaussianRegressionModel(1, s), ValidationError);
}

TEST_CASE("sampling moments") {
  GaussianRegressionModel m(1, eye(1));
  const auto draws = m.sample(vec({1.5, 0.5}), vec({1}), 100000, 11);
  CHECK(std::abs(draws.col(0).mean() - 2.0) < 0.02);
  CHECK(draws == m.sample(vec({1.5, 0.5}), vec({1}), 100000, 11));

  Eigen::MatrixXd s(2, 2);
  s << 2, 0.6, 0.6, 1;
  GaussianRegressionModel m2(2, s);
  const auto x = m2.sample(Eigen::VectorXd::Zero(6), vec({1, 0}), 100000, 5);
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  CHECK((cov - s).norm() / s.norm() < 0.05);
}

TEST_CASE("score closed form and finite differences") {
  GaussianRegressionModel m(1, eye(1));
  // theta = (A11, A12, b), eta = e1, xi = 1, mean 0
  GaussianRegressionModel m2(2, eye(1));
  const auto s = m2.score(vec({0, 0, 0}), vec({1}), vec({1, 0}));
  CHECK(s == vec({1, 0, 1}));
  CHECK(m2.score(vec({0.3, -1, 0.2}), vec({0.5}), vec({1, 0})).isZero(0.0));

  Eigen::MatrixXd sig(2, 2);
  sig << 1.5, 0.3, 0.3, 0.8;
  GaussianRegressionModel m3(2, sig);
  Rng rng(21);
  std::normal_distribution<double> n01;
  const double h = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd theta(6), xi(2), eta(2);
    for (auto* v : {&theta, &xi, &eta})
      for (Eigen::Index i = 0; i < v->size(); ++i) (*v)(i) = n01(rng);
    const auto sc = m3.score(theta, xi, eta);
    for (Eigen::Index i = 0; i < 6; ++i) {
      Eigen::VectorXd tp = theta, tm = theta;
      tp(i) += h;
      tm(i) -= h;
      const double fd = (m3.log_density(tp, xi, eta) - m3.log_density(tm, xi, eta)) / (2 * h);
      CHECK(std::abs(fd - sc(i)) < 1e-6);
    }
  }
}

TEST_CASE("score has mean zero and its second moment is the Fisher matrix") {
  Eigen::MatrixXd sig(2, 2);
  sig << 1.0, 0.4, 0.4, 2.0;
  GaussianRegressionModel m(2, sig);
  const auto theta = vec({0.5, -0.2, 1.0, 0.3, 0.1, -0.4});
  const auto eta = vec({0.7, -1.2});
  const std::size_t n = 100000;
  const auto draws = m.sample(theta, eta, n, 99);
  Eigen::MatrixXd scores(n, 6);
  for (std::size_t i = 0; i < n; ++i) scores.row(i) = m.score(theta, draws.row(i).transpose(), eta).transpose();
  const Eigen::RowVectorXd mean = scores.colwise().mean();
  const Eigen::MatrixXd centered = scores.rowwise() - mean;
  for (int i = 0; i < 6; ++i) {
    const double se = std::sqrt(centered.col(i).squaredNorm() / (n - 1) / n);
    CHECK(std::abs(mean(i)) < 3 * se);
  }
  const Eigen::MatrixXd mc = scores.transpose() * scores / static_cast<double>(n);
  const Eigen::MatrixXd closed = m.fisher_per_context(theta, eta);
  CHECK((mc - closed).norm() / closed.norm() < 0.02);
}

TEST_CASE("fisher closed forms") {
  GaussianRegressionModel m(1, eye(1));
  const Eigen::MatrixXd f = m.fisher_per_context(vec({0, 0}), vec({1}));
  CHECK(f == Eigen::MatrixXd::Ones(2, 2));

  Eigen::MatrixXd s(1, 1);
  s << 4.0;
  GaussianRegressionModel loc(0, s);
  CHECK(loc.fisher_per_context(vec({0}), Eigen::VectorXd(0))(0, 0) == doctest::Approx(0.25));

  Eigen::MatrixXd p(2, 2);
  p << 0.5, 0.5, 0.5, 0.5;
  const auto chain = make_chain({"a", "b"}, p);
  GaussianRegressionModel two(2, eye(1));
  const auto fa = fisher_averaged(two, vec({0, 0, 0}), chain, {0, 1});
  CHECK((fa.matrix - 0.5 * eye(2)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(fa.invertible);

  // canonical chain: A block is diag(nu)
  p << 0.9, 0.1, 0.5, 0.5;
  const auto canon = make_chain({"low", "high"}, p);
  const auto fc = fisher_averaged(two, vec({0.5, 2, 0}), canon, {0, 1});
  CHECK(std::abs(fc.matrix(0, 0) - 5.0 / 6.0) < 1e-12);
  CHECK(std::abs(fc.matrix(1, 1) - 1.0 / 6.0) < 1e-12);
  CHECK(fc.matrix(0, 1) == 0.0);

  // full layout with one-hot embeddings is singular: A11 + A12 and b are confounded
  const auto full = fisher_averaged(two, vec({0.5, 2, 0}), canon);
  CHECK_FALSE(full.invertible);

  Eigen::MatrixXd one(1, 1);
  one << 1.0;
  const auto single = make_chain({"s"}, one, 0, std::vector<Eigen::VectorXd>{vec({0.3})});
  CHECK((fisher_averaged(m, vec({1, 1}), single).matrix - m.fisher_per_context(vec({1, 1}), vec({0.3}))).norm() < 1e-15);
}

TEST_CASE("fisher is invariant under relabeling contexts of a uniform chain") {
  Eigen::MatrixXd p = Eigen::MatrixXd::Constant(3, 3, 1.0 / 3.0);
  std::vector<Eigen::VectorXd> emb{vec({1, 0.2}), vec({-0.4, 1}), vec({0.3, 0.3})};
  std::vector<Eigen::VectorXd> perm{emb[2], emb[0], emb[1]};
  GaussianRegressionModel m(2, eye(1));
  const auto a = fisher_averaged(m, vec({0, 0, 0}), make_chain({"a", "b", "c"}, p, 0, emb));
  const auto b = fisher_averaged(m, vec({0, 0, 0}), make_chain({"a", "b", "c"}, p, 0, perm));
  CHECK((a.matrix - b.matrix).norm() < 1e-14);
}

TEST_CASE("conditional KL") {
  GaussianRegressionModel m(1, eye(1));
  CHECK(conditional_kl(m, vec({1, 2}), vec({1, 2}), vec({1})) == 0.0);
  CHECK(conditional_kl(m, vec({1, 0}), vec({0, 0}), vec({1})) == doctest::Approx(0.5));
  Rng rng(3);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 100; ++i) {
    const auto tp = vec({n01(rng), n01(rng)});
    const auto tq = vec({n01(rng), n01(rng)});
    CHECK(conditional_kl(m, tp, tq, vec({n01(rng)})) >= 0.0);
  }
}

TEST_CASE("density integrates to one under Gauss-Hermite") {
  // E_{z ~ N(0,1)}[f(mu + z) / phi(z)] = integral of f
  const auto rule = gauss_hermite_rule(40);
  GaussianRegressionModel m(1, eye(1) * 2.0);
  const auto theta = vec({0.4, -0.1});
  const auto eta = vec({1.0});
  double total = 0.0;
  const double scale = 2.0;  // integrate in x = scale z
  for (std::size_t j = 0; j < rule.size(); ++j) {
    const double z = rule.node(j)[0];
    const double phi = std::exp(-0.5 * z * z) / std::sqrt(2 * std::numbers::pi);
    total += rule.weights[j] * std::exp(m.log_density(theta, vec({scale * z}), eta)) * scale / phi;
  }
  CHECK(std::abs(total - 1.0) < 1e-8);
}
