#include "bayesoc/density_model.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "bayesoc/error.hpp"

namespace bayesoc {

Eigen::VectorXd ModelParameter::flat() const {
  const auto d = A.rows();
  const auto de = A.cols();
  Eigen::VectorXd out(d * de + d);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < de; ++c) out(r * de + c) = A(r, c);
  out.tail(d) = b;
  return out;
}

ModelParameter ModelParameter::from_flat(const Eigen::VectorXd& flat, std::size_t d,
                                         std::size_t d_eta) {
  const auto dd = static_cast<Eigen::Index>(d);
  const auto de = static_cast<Eigen::Index>(d_eta);
  if (flat.size() != dd * de + dd) {
    throw ValidationError("dimension mismatch: flat parameter has length " +
                          std::to_string(flat.size()) + ", expected " +
                          std::to_string(dd * de + dd));
  }
  ModelParameter p;
  p.A.resize(dd, de);
  for (Eigen::Index r = 0; r < dd; ++r)
    for (Eigen::Index c = 0; c < de; ++c) p.A(r, c) = flat(r * de + c);
  p.b = flat.tail(dd);
  return p;
}

bool ParameterDomain::contains(const Eigen::VectorXd& theta) const {
  if (theta.size() != lower.size()) return false;
  return (theta.array() >= lower.array()).all() && (theta.array() <= upper.array()).all();
}

std::vector<std::size_t> ParameterDomain::free_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < free.size(); ++i)
    if (free[i]) idx.push_back(i);
  return idx;
}

double ParameterDomain::free_volume() const {
  double v = 1.0;
  for (auto i : free_indices()) v *= upper(static_cast<Eigen::Index>(i)) - lower(static_cast<Eigen::Index>(i));
  return v;
}

void ParameterDomain::validate(std::size_t expected_dim) const {
  if (size() != expected_dim || static_cast<std::size_t>(upper.size()) != expected_dim ||
      free.size() != expected_dim) {
    throw ValidationError("parameter domain has wrong dimension, expected " +
                          std::to_string(expected_dim));
  }
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (!(lower(i) < upper(i))) {
      throw ValidationError("parameter domain needs lower < upper at coordinate " +
                            std::to_string(i));
    }
  }
}

Eigen::MatrixXd ConditionalDensityModel::sample(const Eigen::VectorXd& theta,
                                                const Eigen::VectorXd& eta, std::size_t count,
                                                std::uint64_t seed) const {
  Rng rng(seed);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(xi_dim()));
  Eigen::VectorXd row(static_cast<Eigen::Index>(xi_dim()));
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    sample_into(theta, eta, rng, row);
    out.row(i) = row.transpose();
  }
  return out;
}

GaussianRegressionModel::GaussianRegressionModel(std::size_t d_eta, Eigen::MatrixXd sigma)
    : d_(static_cast<std::size_t>(sigma.rows())), d_eta_(d_eta), sigma_(std::move(sigma)) {
  if (d_ == 0 || sigma_.rows() != sigma_.cols()) {
    throw ValidationError("sigma must be a non-empty square matrix");
  }
  if ((sigma_ - sigma_.transpose()).lpNorm<Eigen::Infinity>() > 1e-12) {
    throw ValidationError("sigma must be symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(sigma_);
  if (llt.info() != Eigen::Success) {
    throw ValidationError("sigma must be positive definite");
  }
  chol_ = llt.matrixL();
  if ((chol_.diagonal().array() <= 0.0).any()) {
    throw ValidationError("sigma must be positive definite");
  }
  sigma_inv_ = llt.solve(Eigen::MatrixXd::Identity(sigma_.rows(), sigma_.cols()));
  sigma_inv_ = 0.5 * (sigma_inv_ + sigma_inv_.transpose());
  log_det_ = 2.0 * chol_.diagonal().array().log().sum();
  log_norm_ = -0.5 * static_cast<double>(d_) * std::log(2.0 * std::numbers::pi) - 0.5 * log_det_;
}

void GaussianRegressionModel::check_theta(const Eigen::VectorXd& theta) const {
  if (static_cast<std::size_t>(theta.size()) != parameter_dim()) {
    throw ValidationError("dimension mismatch: theta has length " + std::to_string(theta.size()) +
                          ", expected " + std::to_string(parameter_dim()));
  }
}

void GaussianRegressionModel::check_eta(const Eigen::VectorXd& eta) const {
  if (static_cast<std::size_t>(eta.size()) != d_eta_) {
    throw ValidationError("dimension mismatch: context embedding has length " +
                          std::to_string(eta.size()) + ", expected " + std::to_string(d_eta_));
  }
}

void GaussianRegressionModel::check_xi(const Eigen::VectorXd& xi) const {
  if (static_cast<std::size_t>(xi.size()) != d_) {
    throw ValidationError("dimension mismatch: xi has length " + std::to_string(xi.size()) +
                          ", expected " + std::to_string(d_));
  }
}

Eigen::VectorXd GaussianRegressionModel::mean(const Eigen::VectorXd& theta,
                                              const Eigen::VectorXd& eta) const {
  check_theta(theta);
  check_eta(eta);
  const auto d = static_cast<Eigen::Index>(d_);
  const auto de = static_cast<Eigen::Index>(d_eta_);
  Eigen::VectorXd mu(d);
  for (Eigen::Index r = 0; r < d; ++r) {
    double acc = theta(d * de + r);
    for (Eigen::Index c = 0; c < de; ++c) acc += theta(r * de + c) * eta(c);
    mu(r) = acc;
  }
  return mu;
}

Eigen::MatrixXd GaussianRegressionModel::design(const Eigen::VectorXd& eta) const {
  check_eta(eta);
  const auto d = static_cast<Eigen::Index>(d_);
  const auto de = static_cast<Eigen::Index>(d_eta_);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(d, d * de + d);
  for (Eigen::Index r = 0; r < d; ++r) {
    for (Eigen::Index c = 0; c < de; ++c) x(r, r * de + c) = eta(c);
    x(r, d * de + r) = 1.0;
  }
  return x;
}

double GaussianRegressionModel::mahalanobis_sq(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd z = chol_.triangularView<Eigen::Lower>().solve(x);
  return z.squaredNorm();
}

double GaussianRegressionModel::log_density(const Eigen::VectorXd& theta,
                                            const Eigen::VectorXd& xi,
                                            const Eigen::VectorXd& eta) const {
  check_xi(xi);
  const Eigen::VectorXd resid = xi - mean(theta, eta);
  return log_norm_ - 0.5 * mahalanobis_sq(resid);
}

Eigen::VectorXd GaussianRegressionModel::score(const Eigen::VectorXd& theta,
                                               const Eigen::VectorXd& xi,
                                               const Eigen::VectorXd& eta) const {
  check_xi(xi);
  const Eigen::VectorXd w = sigma_inv_ * (xi - mean(theta, eta));
  const auto d = static_cast<Eigen::Index>(d_);
  const auto de = static_cast<Eigen::Index>(d_eta_);
  Eigen::VectorXd s(d * de + d);
  for (Eigen::Index r = 0; r < d; ++r) {
    for (Eigen::Index c = 0; c < de; ++c) s(r * de + c) = w(r) * eta(c);
    s(d * de + r) = w(r);
  }
  return s;
}

void GaussianRegressionModel::sample_into(const Eigen::VectorXd& theta,
                                          const Eigen::VectorXd& eta, Rng& rng,
                                          Eigen::Ref<Eigen::VectorXd> out) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(static_cast<Eigen::Index>(d_));
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  out = mean(theta, eta) + chol_ * z;
}

Eigen::MatrixXd GaussianRegressionModel::fisher_per_context(const Eigen::VectorXd& theta,
                                                            const Eigen::VectorXd& eta) const {
  check_theta(theta);
  const Eigen::MatrixXd x = design(eta);
  return x.transpose() * sigma_inv_ * x;
}

double conditional_kl(const GaussianRegressionModel& model, const Eigen::VectorXd& theta_p,
                      const Eigen::VectorXd& theta_q, const Eigen::VectorXd& eta) {
  const Eigen::VectorXd delta = model.mean(theta_p, eta) - model.mean(theta_q, eta);
  return 0.5 * model.mahalanobis_sq(delta);
}

namespace {

FisherResult finish_fisher(Eigen::MatrixXd m) {
  m = 0.5 * (m + m.transpose());
  FisherResult out;
  if (m.size() == 0) {
    out.matrix = std::move(m);
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  out.min_eigenvalue = es.eigenvalues().minCoeff();
  out.invertible = out.min_eigenvalue > 1e-10;
  out.matrix = std::move(m);
  return out;
}

Eigen::MatrixXd averaged_matrix(const ConditionalDensityModel& model, const Eigen::VectorXd& theta,
                                const ContextChain& chain) {
  const auto nu = stationary_distribution(chain).weights;
  const auto p = static_cast<Eigen::Index>(model.parameter_dim());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t h = 0; h < chain.size(); ++h) {
    acc += nu(static_cast<Eigen::Index>(h)) * model.fisher_per_context(theta, chain.embeddings[h]);
  }
  return acc;
}

}  // namespace

FisherResult fisher_averaged(const ConditionalDensityModel& model, const Eigen::VectorXd& theta,
                             const ContextChain& chain) {
  return finish_fisher(averaged_matrix(model, theta, chain));
}

FisherResult fisher_averaged(const ConditionalDensityModel& model, const Eigen::VectorXd& theta,
                             const ContextChain& chain, const std::vector<std::size_t>& coords) {
  return finish_fisher(restrict_matrix(averaged_matrix(model, theta, chain), coords));
}

Eigen::MatrixXd restrict_matrix(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
  const auto k = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd out(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j)
      out(i, j) = m(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]),
                    static_cast<Eigen::Index>(idx[static_cast<std::size_t>(j)]));
  return out;
}

Eigen::VectorXd restrict_vector(const Eigen::VectorXd& v, const std::vector<std::size_t>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = v(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace bayesoc
