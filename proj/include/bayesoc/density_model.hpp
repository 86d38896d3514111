#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "bayesoc/context_chain.hpp"
#include "bayesoc/rng.hpp"

namespace bayesoc {

// theta = (A, b) for the mean map g(eta, theta) = A eta + b.
//
// Canonical flat layout, shared by grids, Fisher matrices and gradients:
// A row-major first (index r * d_eta + c), then b (index d * d_eta + r).
struct ModelParameter {
  Eigen::MatrixXd A;  // d x d_eta
  Eigen::VectorXd b;  // d

  Eigen::VectorXd flat() const;
  static ModelParameter from_flat(const Eigen::VectorXd& flat, std::size_t d,
                                  std::size_t d_eta);
};

// Box Theta over the flat parameter. Coordinates with free[i] == false are
// pinned (held at the true value) by grid posteriors.
struct ParameterDomain {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::vector<bool> free;

  std::size_t size() const { return static_cast<std::size_t>(lower.size()); }
  bool contains(const Eigen::VectorXd& theta) const;
  std::vector<std::size_t> free_indices() const;
  // Volume of the box restricted to the free coordinates.
  double free_volume() const;
  // Throws ValidationError when bounds are inconsistent.
  void validate(std::size_t expected_dim) const;
};

// Family-generic conditional density f(xi | eta, theta).
class ConditionalDensityModel {
 public:
  virtual ~ConditionalDensityModel() = default;

  virtual std::size_t xi_dim() const = 0;
  virtual std::size_t eta_dim() const = 0;
  virtual std::size_t parameter_dim() const = 0;

  virtual double log_density(const Eigen::VectorXd& theta, const Eigen::VectorXd& xi,
                             const Eigen::VectorXd& eta) const = 0;
  // Gradient of log_density with respect to the flat parameter.
  virtual Eigen::VectorXd score(const Eigen::VectorXd& theta, const Eigen::VectorXd& xi,
                                const Eigen::VectorXd& eta) const = 0;
  virtual void sample_into(const Eigen::VectorXd& theta, const Eigen::VectorXd& eta,
                           Rng& rng, Eigen::Ref<Eigen::VectorXd> out) const = 0;
  virtual Eigen::MatrixXd fisher_per_context(const Eigen::VectorXd& theta,
                                             const Eigen::VectorXd& eta) const = 0;

  // count x d matrix of draws; deterministic given the seed.
  Eigen::MatrixXd sample(const Eigen::VectorXd& theta, const Eigen::VectorXd& eta,
                         std::size_t count, std::uint64_t seed) const;
};

// xi = A eta + b + eps, eps ~ N(0, Sigma), Sigma known and fixed.
class GaussianRegressionModel final : public ConditionalDensityModel {
 public:
  // Throws ValidationError if sigma is not symmetric positive definite.
  GaussianRegressionModel(std::size_t d_eta, Eigen::MatrixXd sigma);

  std::size_t xi_dim() const override { return d_; }
  std::size_t eta_dim() const override { return d_eta_; }
  std::size_t parameter_dim() const override { return d_ * d_eta_ + d_; }

  const Eigen::MatrixXd& sigma() const { return sigma_; }
  const Eigen::MatrixXd& sigma_inv() const { return sigma_inv_; }
  // Lower Cholesky factor L with L L^T = Sigma.
  const Eigen::MatrixXd& sigma_chol() const { return chol_; }
  double log_det_sigma() const { return log_det_; }
  // -(d/2) log(2 pi) - (1/2) log|Sigma|
  double log_normalizer() const { return log_norm_; }

  Eigen::VectorXd mean(const Eigen::VectorXd& theta, const Eigen::VectorXd& eta) const;
  // d x p matrix X with mean = X theta.
  Eigen::MatrixXd design(const Eigen::VectorXd& eta) const;
  // (x^T Sigma^{-1} x)
  double mahalanobis_sq(const Eigen::VectorXd& x) const;

  double log_density(const Eigen::VectorXd& theta, const Eigen::VectorXd& xi,
                     const Eigen::VectorXd& eta) const override;
  Eigen::VectorXd score(const Eigen::VectorXd& theta, const Eigen::VectorXd& xi,
                        const Eigen::VectorXd& eta) const override;
  void sample_into(const Eigen::VectorXd& theta, const Eigen::VectorXd& eta, Rng& rng,
                   Eigen::Ref<Eigen::VectorXd> out) const override;
  // (eta~ eta~^T) kron Sigma^{-1} in the flat layout, eta~ = (eta, 1).
  Eigen::MatrixXd fisher_per_context(const Eigen::VectorXd& theta,
                                     const Eigen::VectorXd& eta) const override;

  void check_theta(const Eigen::VectorXd& theta) const;
  void check_eta(const Eigen::VectorXd& eta) const;
  void check_xi(const Eigen::VectorXd& xi) const;

 private:
  std::size_t d_;
  std::size_t d_eta_;
  Eigen::MatrixXd sigma_;
  Eigen::MatrixXd sigma_inv_;
  Eigen::MatrixXd chol_;
  double log_det_ = 0.0;
  double log_norm_ = 0.0;
};

// KL(f(.|eta,theta_p) || f(.|eta,theta_q)) for equal covariances.
double conditional_kl(const GaussianRegressionModel& model, const Eigen::VectorXd& theta_p,
                      const Eigen::VectorXd& theta_q, const Eigen::VectorXd& eta);

struct FisherResult {
  Eigen::MatrixXd matrix;
  double min_eigenvalue = 0.0;
  bool invertible = false;  // min eigenvalue > 1e-10
};

// I(theta) = sum_h nu(h) I(theta; h).
FisherResult fisher_averaged(const ConditionalDensityModel& model, const Eigen::VectorXd& theta,
                             const ContextChain& chain);
// Same, restricted to the given coordinates before the eigenvalue check.
FisherResult fisher_averaged(const ConditionalDensityModel& model, const Eigen::VectorXd& theta,
                             const ContextChain& chain, const std::vector<std::size_t>& coords);

Eigen::MatrixXd restrict_matrix(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx);
Eigen::VectorXd restrict_vector(const Eigen::VectorXd& v, const std::vector<std::size_t>& idx);

}  // namespace bayesoc
