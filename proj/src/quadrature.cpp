#include "bayesoc/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "bayesoc/error.hpp"
#include "bayesoc/rng.hpp"

namespace bayesoc {
namespace {

// Relative weight below which lattice nodes and mixture components are dropped.
constexpr double kPruneRatio = 1e-18;

}  // namespace

QuadratureRule QuadratureRule::gauss_hermite(std::size_t order) {
  QuadratureRule r;
  r.kind = QuadratureKind::gauss_hermite;
  r.order = order;
  return r;
}

QuadratureRule QuadratureRule::monte_carlo(std::size_t count, std::uint64_t seed) {
  QuadratureRule r;
  r.kind = QuadratureKind::monte_carlo;
  r.count = count;
  r.seed = seed;
  return r;
}

QuadratureRule QuadratureRule::density_lattice(double step, double span) {
  QuadratureRule r;
  r.kind = QuadratureKind::density_lattice;
  r.step = step;
  r.span = span;
  return r;
}

double NodeSet::weight_sum() const {
  return std::accumulate(weights.begin(), weights.end(), 0.0);
}

NodeSet gauss_hermite_rule(std::size_t order) {
  if (order == 0) throw ValidationError("Gauss-Hermite order must be positive");
  const auto n = static_cast<Eigen::Index>(order);
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index k = 1; k < n; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
  NodeSet out;
  out.dim = 1;
  out.nodes.resize(order);
  out.weights.resize(order);
  double total = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    out.nodes[static_cast<std::size_t>(k)] = es.eigenvalues()(k);
    const double v0 = es.eigenvectors()(0, k);
    out.weights[static_cast<std::size_t>(k)] = v0 * v0;
    total += v0 * v0;
  }
  for (auto& w : out.weights) w /= total;
  // Symmetrize: the rule is exactly symmetric about zero.
  for (std::size_t k = 0; k < order / 2; ++k) {
    const std::size_t m = order - 1 - k;
    const double x = 0.5 * (out.nodes[m] - out.nodes[k]);
    const double w = 0.5 * (out.weights[m] + out.weights[k]);
    out.nodes[k] = -x;
    out.nodes[m] = x;
    out.weights[k] = out.weights[m] = w;
  }
  if (order % 2 == 1) out.nodes[order / 2] = 0.0;
  return out;
}

Eigen::VectorXd ParameterMixture::theta(std::size_t k) const {
  return Eigen::Map<const Eigen::VectorXd>(thetas.data() + k * dim, static_cast<Eigen::Index>(dim));
}

ParameterMixture ParameterMixture::point_mass(const Eigen::VectorXd& theta) {
  ParameterMixture m;
  m.dim = static_cast<std::size_t>(theta.size());
  m.thetas.assign(theta.data(), theta.data() + theta.size());
  m.weights = {1.0};
  return m;
}

XiQuadrature::XiQuadrature(QuadratureRule rule, const GaussianRegressionModel& model,
                           const ContextChain& chain, const ParameterDomain& domain)
    : rule_(rule), model_(model), embeddings_(chain.embeddings) {
  const std::size_t d = model_.xi_dim();
  switch (rule_.kind) {
    case QuadratureKind::gauss_hermite: {
      const NodeSet one = gauss_hermite_rule(rule_.order);
      // Tensor product over the d coordinates of z.
      std::size_t total = 1;
      for (std::size_t r = 0; r < d; ++r) total *= one.size();
      base_.dim = d;
      base_.nodes.resize(total * d);
      base_.weights.resize(total);
      for (std::size_t j = 0; j < total; ++j) {
        std::size_t rem = j;
        double w = 1.0;
        for (std::size_t r = d; r-- > 0;) {
          const std::size_t k = rem % one.size();
          rem /= one.size();
          base_.nodes[j * d + r] = one.nodes[k];
          w *= one.weights[k];
        }
        base_.weights[j] = w;
      }
      break;
    }
    case QuadratureKind::monte_carlo: {
      if (rule_.count == 0) throw ValidationError("Monte Carlo quadrature needs count >= 1");
      Rng rng(rule_.seed);
      std::normal_distribution<double> normal(0.0, 1.0);
      base_.dim = d;
      base_.nodes.resize(rule_.count * d);
      for (auto& z : base_.nodes) z = normal(rng);
      base_.weights.assign(rule_.count, 1.0 / static_cast<double>(rule_.count));
      break;
    }
    case QuadratureKind::density_lattice: {
      if (!(rule_.step > 0.0) || !(rule_.span > 0.0)) {
        throw ValidationError("density lattice needs step > 0 and span > 0");
      }
      const auto de = model_.eta_dim();
      for (const auto& eta : embeddings_) {
        NodeSet lat;
        lat.dim = d;
        std::vector<std::vector<double>> axes(d);
        for (std::size_t r = 0; r < d; ++r) {
          // Range of the r-th mean coordinate over the parameter box.
          const auto ib = static_cast<Eigen::Index>(d * de + r);
          double lo = domain.lower(ib);
          double hi = domain.upper(ib);
          for (std::size_t c = 0; c < de; ++c) {
            const auto ia = static_cast<Eigen::Index>(r * de + c);
            const double e = eta(static_cast<Eigen::Index>(c));
            const double a1 = domain.lower(ia) * e;
            const double a2 = domain.upper(ia) * e;
            lo += std::min(a1, a2);
            hi += std::max(a1, a2);
          }
          const double sd = std::sqrt(model_.sigma()(static_cast<Eigen::Index>(r),
                                                     static_cast<Eigen::Index>(r)));
          lo -= rule_.span * sd;
          hi += rule_.span * sd;
          const auto count = static_cast<std::size_t>(std::ceil((hi - lo) / rule_.step)) + 1;
          axes[r].resize(count);
          for (std::size_t k = 0; k < count; ++k) axes[r][k] = lo + static_cast<double>(k) * rule_.step;
        }
        std::size_t total = 1;
        for (const auto& a : axes) total *= a.size();
        lat.nodes.resize(total * d);
        for (std::size_t j = 0; j < total; ++j) {
          std::size_t rem = j;
          for (std::size_t r = d; r-- > 0;) {
            lat.nodes[j * d + r] = axes[r][rem % axes[r].size()];
            rem /= axes[r].size();
          }
        }
        lat.weights.assign(total, 0.0);
        lattice_.push_back(std::move(lat));
      }
      break;
    }
  }
}

std::vector<double> XiQuadrature::lattice_weights(const Eigen::VectorXd& mean,
                                                  std::size_t context) const {
  const NodeSet& lat = lattice_[context];
  const std::size_t d = lat.dim;
  const Eigen::MatrixXd& prec = model_.sigma_inv();
  std::vector<double> logw(lat.size());
  for (std::size_t j = 0; j < lat.size(); ++j) {
    double q = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      const double ur = lat.nodes[j * d + r] - mean(static_cast<Eigen::Index>(r));
      for (std::size_t c = 0; c < d; ++c) {
        const double uc = lat.nodes[j * d + c] - mean(static_cast<Eigen::Index>(c));
        q += ur * prec(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * uc;
      }
    }
    logw[j] = -0.5 * q;
  }
  const double mx = *std::max_element(logw.begin(), logw.end());
  const double cutoff = std::log(kPruneRatio);
  double total = 0.0;
  for (auto& v : logw) {
    const double shifted = v - mx;
    v = shifted < cutoff ? 0.0 : std::exp(shifted);
    total += v;
  }
  for (auto& v : logw) v /= total;
  return logw;
}

NodeSet XiQuadrature::affine_nodes(const Eigen::VectorXd& mean) const {
  const std::size_t d = base_.dim;
  const Eigen::MatrixXd& l = model_.sigma_chol();
  NodeSet out;
  out.dim = d;
  out.nodes.resize(base_.nodes.size());
  out.weights = base_.weights;
  for (std::size_t j = 0; j < base_.size(); ++j) {
    for (std::size_t r = 0; r < d; ++r) {
      double v = mean(static_cast<Eigen::Index>(r));
      for (std::size_t c = 0; c <= r; ++c) {
        v += l(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * base_.nodes[j * d + c];
      }
      out.nodes[j * d + r] = v;
    }
  }
  return out;
}

NodeSet XiQuadrature::compact(const NodeSet& dense) {
  NodeSet out;
  out.dim = dense.dim;
  for (std::size_t j = 0; j < dense.size(); ++j) {
    if (dense.weights[j] > 0.0) {
      auto node = dense.node(j);
      out.nodes.insert(out.nodes.end(), node.begin(), node.end());
      out.weights.push_back(dense.weights[j]);
    }
  }
  return out;
}

NodeSet XiQuadrature::conditional(const Eigen::VectorXd& theta, std::size_t context) const {
  if (context >= embeddings_.size()) throw ValidationError("context index out of range");
  const Eigen::VectorXd mu = model_.mean(theta, embeddings_[context]);
  if (rule_.kind != QuadratureKind::density_lattice) return affine_nodes(mu);
  NodeSet dense = lattice_[context];
  dense.weights = lattice_weights(mu, context);
  return compact(dense);
}

NodeSet XiQuadrature::predictive(const ParameterMixture& mixture, std::size_t context) const {
  if (context >= embeddings_.size()) throw ValidationError("context index out of range");
  if (mixture.size() == 0) throw ValidationError("empty parameter mixture");
  const auto& eta = embeddings_[context];
  // Merge components by their conditional mean, which fully determines f(.|eta,theta).
  std::map<std::vector<double>, double> groups;
  for (std::size_t k = 0; k < mixture.size(); ++k) {
    if (!(mixture.weights[k] > 0.0)) continue;
    const Eigen::VectorXd mu = model_.mean(mixture.theta(k), eta);
    groups[std::vector<double>(mu.data(), mu.data() + mu.size())] += mixture.weights[k];
  }
  if (groups.empty()) throw ValidationError("parameter mixture has no positive weight");
  double wmax = 0.0;
  for (const auto& [mu, w] : groups) wmax = std::max(wmax, w);
  std::vector<std::pair<Eigen::VectorXd, double>> kept;
  double total = 0.0;
  for (const auto& [mu, w] : groups) {
    if (w < kPruneRatio * wmax) continue;
    kept.emplace_back(Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(mu.size())), w);
    total += w;
  }
  for (auto& [mu, w] : kept) w /= total;

  if (kept.size() == 1) {
    if (rule_.kind != QuadratureKind::density_lattice) return affine_nodes(kept.front().first);
    NodeSet dense = lattice_[context];
    dense.weights = lattice_weights(kept.front().first, context);
    return compact(dense);
  }

  if (rule_.kind == QuadratureKind::density_lattice) {
    NodeSet dense = lattice_[context];
    for (const auto& [mu, w] : kept) {
      const auto q = lattice_weights(mu, context);
      for (std::size_t j = 0; j < q.size(); ++j) dense.weights[j] += w * q[j];
    }
    NodeSet out = compact(dense);
    const double s = out.weight_sum();
    for (auto& w : out.weights) w /= s;
    return out;
  }

  NodeSet out;
  out.dim = base_.dim;
  for (const auto& [mu, w] : kept) {
    NodeSet part = affine_nodes(mu);
    out.nodes.insert(out.nodes.end(), part.nodes.begin(), part.nodes.end());
    for (double q : part.weights) out.weights.push_back(w * q);
  }
  return out;
}

}  // namespace bayesoc
