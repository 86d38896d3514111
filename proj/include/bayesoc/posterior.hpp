#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bayesoc/context_chain.hpp"
#include "bayesoc/density_model.hpp"
#include "bayesoc/quadrature.hpp"

namespace bayesoc {

// Ordered (eta_i, xi_i) records, i = 1..N.
struct Dataset {
  std::size_t dim = 1;
  std::vector<std::size_t> contexts;
  std::vector<double> xi;  // N x dim, row-major
  std::optional<std::uint64_t> seed;
  std::optional<Eigen::VectorXd> theta_star;

  std::size_t size() const { return contexts.size(); }
  bool empty() const { return contexts.empty(); }
  std::span<const double> xi_at(std::size_t i) const { return {xi.data() + i * dim, dim}; }
  Eigen::VectorXd xi_vector(std::size_t i) const;
  void push_back(std::size_t context, std::span<const double> value);
  // First n records; provenance is kept.
  Dataset prefix(std::size_t n) const;
  // Throws ValidationError on bad context indices or dimension mismatch.
  void validate(const ContextChain& chain, std::size_t d) const;
};

// Prior over the free coordinates. A uniform prior has constant density
// 1 / vol(Theta); a Gaussian prior is N(mean, covariance) on the free block
// (truncated to Theta by grid restriction when used with a grid).
struct PriorSpec {
  enum class Kind { uniform, gaussian };
  Kind kind = Kind::uniform;
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  static PriorSpec uniform() { return {}; }
  static PriorSpec gaussian(Eigen::VectorXd mean, Eigen::MatrixXd covariance);
  // c1 >= p(theta) >= c2 on Theta; both equal 1/vol for the uniform prior.
  std::pair<double, double> density_bounds(const ParameterDomain& domain) const;
};

// Tensor grid over the free coordinates of Theta; pinned coordinates take
// their value from `pinned`.
struct GridSpec {
  ParameterDomain domain;
  Eigen::VectorXd pinned;
  std::size_t points = 41;
};

class GridPosterior {
 public:
  GridPosterior() = default;

  std::size_t size() const { return log_weights_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::size_t>& free() const { return free_; }
  Eigen::VectorXd theta(std::size_t k) const;
  std::span<const double> theta_span(std::size_t k) const {
    return {nodes_.data() + k * dim_, dim_};
  }
  const std::vector<double>& log_weights() const { return log_weights_; }
  // log prior + sum_i (log f(xi_i|eta_i,theta_k) + const), up to a node-independent shift.
  const std::vector<double>& log_unnormalized() const { return log_unnormalized_; }
  double weight(std::size_t k) const;
  double cell_volume() const { return cell_volume_; }
  const std::vector<double>& spacing() const { return spacing_; }
  std::size_t records() const { return records_; }

  ParameterMixture mixture() const;
  Eigen::VectorXd mean() const;

 private:
  friend GridPosterior make_grid_prior(const PriorSpec&, const GridSpec&);
  friend class GridLikelihood;

  void normalize();

  std::size_t dim_ = 0;
  std::vector<std::size_t> free_;
  std::vector<double> nodes_;
  std::vector<double> log_weights_;
  std::vector<double> log_unnormalized_;
  std::vector<double> spacing_;
  double cell_volume_ = 0.0;
  std::size_t records_ = 0;
};

GridPosterior make_grid_prior(const PriorSpec& prior, const GridSpec& grid);

GridPosterior posterior_update_batch(const PriorSpec& prior, const GridSpec& grid,
                                     const GaussianRegressionModel& model,
                                     const ContextChain& chain, const Dataset& data);
// Same result as batch: batch is a fold of this update.
GridPosterior posterior_update_sequential(const GridPosterior& posterior,
                                          const GaussianRegressionModel& model,
                                          const ContextChain& chain, std::size_t context,
                                          std::span<const double> xi);
// Folds all records of `data` into `posterior`.
GridPosterior posterior_update_sequential(const GridPosterior& posterior,
                                          const GaussianRegressionModel& model,
                                          const ContextChain& chain, const Dataset& data);

// Exact Gaussian posterior over the free block with pinned coordinates held
// fixed.
struct ConjugatePosterior {
  std::vector<std::size_t> free;
  Eigen::VectorXd pinned;      // full flat vector; free entries ignored
  Eigen::VectorXd mean;        // free block
  Eigen::MatrixXd covariance;  // free block
  Eigen::MatrixXd precision;

  Eigen::VectorXd full_mean() const;
  // Tensor Gauss-Hermite rendering with `order` nodes per free coordinate.
  ParameterMixture to_mixture(std::size_t order = 20) const;
};

ConjugatePosterior conjugate_update(const PriorSpec& prior, const GaussianRegressionModel& model,
                                    const ContextChain& chain, const Dataset& data,
                                    const std::vector<std::size_t>& free,
                                    const Eigen::VectorXd& pinned);

// sum_k w_k E_{xi ~ f(.|eta,theta_k)}[integrand(xi)]
double predictive_expectation(const ParameterMixture& posterior, const XiQuadrature& quadrature,
                              std::size_t context,
                              const std::function<double(std::span<const double>)>& integrand);

double mass_outside_ball(const GridPosterior& posterior, const Eigen::VectorXd& center,
                         double radius);

// Largest posterior density (weight / cell volume) over nodes with
// psi_star - psi_k >= epsilon, as a natural log. nullopt when no node
// qualifies (empty V_eps).
std::optional<double> log_sup_density_outside(const GridPosterior& posterior,
                                              std::span<const double> psi_values,
                                              double psi_star, double epsilon);

// (1/N) sum_i log f(xi_i | eta_i, theta)
double empirical_loglik(const GaussianRegressionModel& model, const ContextChain& chain,
                        const Dataset& data, const Eigen::VectorXd& theta);
// psi(theta) with closed-form inner expectation.
double population_loglik(const GaussianRegressionModel& model, const ContextChain& chain,
                         const Eigen::VectorXd& theta, const Eigen::VectorXd& theta_star);

// phi_N and psi over every node of a grid (vectorized).
std::vector<double> grid_empirical_loglik(const GridPosterior& grid,
                                          const GaussianRegressionModel& model,
                                          const ContextChain& chain, const Dataset& data);
std::vector<double> grid_population_loglik(const GridPosterior& grid,
                                           const GaussianRegressionModel& model,
                                           const ContextChain& chain,
                                           const Eigen::VectorXd& theta_star);

// sum_k w_k * ||f(.|eta,theta_k) - f(.|eta,theta*)||_1
double predictive_l1_distance(const ParameterMixture& posterior,
                              const GaussianRegressionModel& model, const ContextChain& chain,
                              std::size_t context, const Eigen::VectorXd& theta_star);

// L1 distance between N(m1, Sigma) and N(m2, Sigma).
double gaussian_l1_distance(const GaussianRegressionModel& model, const Eigen::VectorXd& mean_gap);

double standard_normal_cdf(double x);

}  // namespace bayesoc
