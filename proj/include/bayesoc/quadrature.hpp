#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bayesoc/context_chain.hpp"
#include "bayesoc/density_model.hpp"

namespace bayesoc {

enum class QuadratureKind { gauss_hermite, monte_carlo, density_lattice };

// How E_{xi ~ f(.|eta,theta)}[.] is realized numerically.
//
// gauss_hermite and monte_carlo transform one base node set affinely to every
// (theta, eta): xi_j = mean + L z_j (common random numbers for Monte Carlo).
// density_lattice keeps xi nodes fixed on a uniform grid that covers every
// reachable mean by `span` standard deviations, and puts the normalized model
// density on them. Its weights are smooth in theta with d w_j / d theta =
// w_j * score_j, so quadrature values and their score-weighted derivatives
// describe the same discrete problem.
struct QuadratureRule {
  QuadratureKind kind = QuadratureKind::gauss_hermite;
  std::size_t order = 20;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  double step = 0.05;
  double span = 8.0;

  static QuadratureRule gauss_hermite(std::size_t order);
  static QuadratureRule monte_carlo(std::size_t count, std::uint64_t seed);
  static QuadratureRule density_lattice(double step, double span);
};

// Discrete measure on R^dim; nodes stored row-major.
struct NodeSet {
  std::size_t dim = 0;
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
  std::span<const double> node(std::size_t j) const {
    return {nodes.data() + j * dim, dim};
  }
  double weight_sum() const;
};

// Probabilists' Gauss-Hermite rule for N(0,1), weights normalized to 1
// (Golub-Welsch).
NodeSet gauss_hermite_rule(std::size_t order);

// Discrete distribution over flat parameters: a grid posterior, a
// Gauss-Hermite rendering of a Gaussian posterior, or a point mass.
struct ParameterMixture {
  std::size_t dim = 0;
  std::vector<double> thetas;  // size() x dim
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
  Eigen::VectorXd theta(std::size_t k) const;
  static ParameterMixture point_mass(const Eigen::VectorXd& theta);
};

class XiQuadrature {
 public:
  XiQuadrature(QuadratureRule rule, const GaussianRegressionModel& model,
               const ContextChain& chain, const ParameterDomain& domain);

  const QuadratureRule& rule() const { return rule_; }

  // Nodes and weights for f(.|eta_context, theta).
  NodeSet conditional(const Eigen::VectorXd& theta, std::size_t context) const;
  // Posterior predictive: sum_k w_k f(.|eta_context, theta_k). Components with
  // identical means are merged first.
  NodeSet predictive(const ParameterMixture& mixture, std::size_t context) const;

 private:
  std::vector<double> lattice_weights(const Eigen::VectorXd& mean, std::size_t context) const;
  NodeSet affine_nodes(const Eigen::VectorXd& mean) const;
  static NodeSet compact(const NodeSet& dense);

  QuadratureRule rule_;
  GaussianRegressionModel model_;
  std::vector<Eigen::VectorXd> embeddings_;
  NodeSet base_;                   // standard-normal nodes (gauss_hermite / monte_carlo)
  std::vector<NodeSet> lattice_;   // per context (density_lattice)
};

}  // namespace bayesoc
