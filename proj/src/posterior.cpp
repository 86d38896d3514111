#include "bayesoc/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bayesoc/error.hpp"
#include "bayesoc/simd.hpp"

namespace bayesoc {

Eigen::VectorXd Dataset::xi_vector(std::size_t i) const {
  return Eigen::Map<const Eigen::VectorXd>(xi.data() + i * dim, static_cast<Eigen::Index>(dim));
}

void Dataset::push_back(std::size_t context, std::span<const double> value) {
  if (value.size() != dim) throw ValidationError("xi dimension does not match the dataset");
  contexts.push_back(context);
  xi.insert(xi.end(), value.begin(), value.end());
}

Dataset Dataset::prefix(std::size_t n) const {
  if (n > size()) throw ValidationError("prefix longer than the dataset");
  Dataset out;
  out.dim = dim;
  out.contexts.assign(contexts.begin(), contexts.begin() + static_cast<std::ptrdiff_t>(n));
  out.xi.assign(xi.begin(), xi.begin() + static_cast<std::ptrdiff_t>(n * dim));
  out.seed = seed;
  out.theta_star = theta_star;
  return out;
}

void Dataset::validate(const ContextChain& chain, std::size_t d) const {
  if (dim != d) {
    throw ValidationError("dataset xi dimension " + std::to_string(dim) +
                          " does not match model dimension " + std::to_string(d));
  }
  if (xi.size() != contexts.size() * dim) throw ValidationError("dataset storage is ragged");
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    if (contexts[i] >= chain.size()) {
      throw ValidationError("record " + std::to_string(i + 1) + " has context index " +
                            std::to_string(contexts[i]) + " outside the chain");
    }
  }
  for (double v : xi) {
    if (!std::isfinite(v)) throw ValidationError("dataset contains a non-finite xi");
  }
}

PriorSpec PriorSpec::gaussian(Eigen::VectorXd mean, Eigen::MatrixXd covariance) {
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size()) {
    throw ValidationError("prior covariance shape does not match the mean");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  if (llt.info() != Eigen::Success) throw ValidationError("prior covariance is not SPD");
  PriorSpec p;
  p.kind = Kind::gaussian;
  p.mean = std::move(mean);
  p.covariance = std::move(covariance);
  return p;
}

std::pair<double, double> PriorSpec::density_bounds(const ParameterDomain& domain) const {
  if (kind == Kind::uniform) {
    const double c = 1.0 / domain.free_volume();
    return {c, c};
  }
  // Gaussian on a box: max at the mode (clamped), min at the farthest corner.
  const auto free = domain.free_indices();
  const auto k = static_cast<double>(free.size());
  const Eigen::MatrixXd prec = covariance.inverse();
  const double log_norm = -0.5 * k * std::log(2.0 * M_PI) - 0.5 * std::log(covariance.determinant());
  Eigen::VectorXd mode(mean.size());
  for (std::size_t i = 0; i < free.size(); ++i) {
    const auto fi = static_cast<Eigen::Index>(free[i]);
    mode(static_cast<Eigen::Index>(i)) = std::clamp(mean(static_cast<Eigen::Index>(i)),
                                                    domain.lower(fi), domain.upper(fi));
  }
  const Eigen::VectorXd dm = mode - mean;
  double qmax = 0.0;
  const std::size_t corners = std::size_t{1} << free.size();
  for (std::size_t c = 0; c < corners; ++c) {
    Eigen::VectorXd v(mean.size());
    for (std::size_t i = 0; i < free.size(); ++i) {
      const auto fi = static_cast<Eigen::Index>(free[i]);
      v(static_cast<Eigen::Index>(i)) = ((c >> i) & 1U) ? domain.upper(fi) : domain.lower(fi);
    }
    const Eigen::VectorXd dv = v - mean;
    qmax = std::max(qmax, dv.dot(prec * dv));
  }
  return {std::exp(log_norm - 0.5 * dm.dot(prec * dm)), std::exp(log_norm - 0.5 * qmax)};
}

Eigen::VectorXd GridPosterior::theta(std::size_t k) const {
  return Eigen::Map<const Eigen::VectorXd>(nodes_.data() + k * dim_, static_cast<Eigen::Index>(dim_));
}

double GridPosterior::weight(std::size_t k) const { return std::exp(log_weights_[k]); }

ParameterMixture GridPosterior::mixture() const {
  ParameterMixture m;
  m.dim = dim_;
  m.thetas = nodes_;
  m.weights.resize(size());
  for (std::size_t k = 0; k < size(); ++k) m.weights[k] = weight(k);
  return m;
}

Eigen::VectorXd GridPosterior::mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
  for (std::size_t k = 0; k < size(); ++k) m += weight(k) * theta(k);
  return m;
}

void GridPosterior::normalize() {
  const double mx = simd::max_value(log_unnormalized_);
  if (!std::isfinite(mx)) throw RuntimeFailure("zero evidence");
  double s = 0.0;
  for (double v : log_unnormalized_) s += std::exp(v - mx);
  if (!(s > 0.0) || !std::isfinite(s)) throw RuntimeFailure("zero evidence");
  const double lse = mx + std::log(s);
  log_weights_.resize(log_unnormalized_.size());
  for (std::size_t k = 0; k < log_unnormalized_.size(); ++k) {
    log_weights_[k] = log_unnormalized_[k] - lse;
  }
}

GridPosterior make_grid_prior(const PriorSpec& prior, const GridSpec& grid) {
  const std::size_t p = grid.domain.size();
  grid.domain.validate(p);
  if (static_cast<std::size_t>(grid.pinned.size()) != p) {
    throw ValidationError("pinned vector has the wrong dimension");
  }
  if (grid.points < 1) throw ValidationError("grid needs at least one point per coordinate");
  GridPosterior g;
  g.dim_ = p;
  g.free_ = grid.domain.free_indices();
  const std::size_t nf = g.free_.size();
  if (prior.kind == PriorSpec::Kind::gaussian && static_cast<std::size_t>(prior.mean.size()) != nf) {
    throw ValidationError("Gaussian prior dimension must equal the number of free coordinates");
  }
  for (std::size_t i = 0; i < p; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (!grid.domain.free[i] && !(grid.pinned(ii) >= grid.domain.lower(ii) &&
                                  grid.pinned(ii) <= grid.domain.upper(ii))) {
      throw ValidationError("pinned coordinate lies outside Theta");
    }
  }
  // Cell-centred nodes: m cells of equal width per free coordinate, so that
  // weight / cell_volume is a density and the cells tile Theta exactly.
  std::size_t count = 1;
  g.spacing_.resize(nf);
  g.cell_volume_ = 1.0;
  for (std::size_t i = 0; i < nf; ++i) {
    const auto fi = static_cast<Eigen::Index>(g.free_[i]);
    g.spacing_[i] = (grid.domain.upper(fi) - grid.domain.lower(fi)) / static_cast<double>(grid.points);
    g.cell_volume_ *= g.spacing_[i];
    count *= grid.points;
  }
  g.nodes_.resize(count * p);
  g.log_unnormalized_.assign(count, 0.0);
  Eigen::MatrixXd prec;
  if (prior.kind == PriorSpec::Kind::gaussian) prec = prior.covariance.inverse();
  std::vector<std::size_t> digit(nf, 0);
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t rem = k;
    for (std::size_t i = nf; i-- > 0;) {
      digit[i] = rem % grid.points;
      rem /= grid.points;
    }
    double* th = g.nodes_.data() + k * p;
    for (std::size_t i = 0; i < p; ++i) th[i] = grid.pinned(static_cast<Eigen::Index>(i));
    for (std::size_t i = 0; i < nf; ++i) {
      const auto fi = static_cast<Eigen::Index>(g.free_[i]);
      th[g.free_[i]] = grid.domain.lower(fi) + (static_cast<double>(digit[i]) + 0.5) * g.spacing_[i];
    }
    if (prior.kind == PriorSpec::Kind::gaussian) {
      Eigen::VectorXd dv(static_cast<Eigen::Index>(nf));
      for (std::size_t i = 0; i < nf; ++i) {
        dv(static_cast<Eigen::Index>(i)) = th[g.free_[i]] - prior.mean(static_cast<Eigen::Index>(i));
      }
      g.log_unnormalized_[k] = -0.5 * dv.dot(prec * dv);
    }
  }
  g.normalize();
  return g;
}

// Whitened conditional means of every grid node, laid out per (context,
// output coordinate) as contiguous arrays so the per-record update is one
// vectorized pass: log f = const - 0.5 * sum_r (z_r - m_r[k])^2 with
// z = L^{-1} xi and m[k] = L^{-1} mean(theta_k, eta).
class GridLikelihood {
 public:
  GridLikelihood(const GridPosterior& grid, const GaussianRegressionModel& model,
                 const ContextChain& chain)
      : d_(model.xi_dim()), contexts_(chain.size()), model_(&model) {
    if (chain.embedding_dim() != model.eta_dim()) {
      throw ValidationError("chain embedding dimension does not match the model");
    }
    if (grid.dim() != model.parameter_dim()) {
      throw ValidationError("grid parameter dimension does not match the model");
    }
    const std::size_t K = grid.size();
    means_.assign(contexts_ * d_, std::vector<double>(K));
    const Eigen::MatrixXd& L = model.sigma_chol();
    for (std::size_t h = 0; h < contexts_; ++h) {
      const Eigen::MatrixXd X = model.design(chain.embeddings[h]);
      for (std::size_t k = 0; k < K; ++k) {
        const auto th = grid.theta_span(k);
        const Eigen::VectorXd mu =
            X * Eigen::Map<const Eigen::VectorXd>(th.data(), static_cast<Eigen::Index>(th.size()));
        const Eigen::VectorXd z = L.triangularView<Eigen::Lower>().solve(mu);
        for (std::size_t r = 0; r < d_; ++r) means_[h * d_ + r][k] = z(static_cast<Eigen::Index>(r));
      }
    }
  }

  // out[k] += -0.5 * ||z - m[k]||^2 for one record (constant omitted).
  void accumulate(std::vector<double>& out, std::size_t context, std::span<const double> xi) const {
    if (context >= contexts_) throw ValidationError("record context index outside the chain");
    if (xi.size() != d_) throw ValidationError("record xi dimension does not match the model");
    const Eigen::VectorXd z = model_->sigma_chol().triangularView<Eigen::Lower>().solve(
        Eigen::Map<const Eigen::VectorXd>(xi.data(), static_cast<Eigen::Index>(d_)));
    for (std::size_t r = 0; r < d_; ++r) {
      simd::accumulate_sq_residual(out, means_[context * d_ + r], z(static_cast<Eigen::Index>(r)), -0.5);
    }
  }

  const std::vector<double>& means(std::size_t context, std::size_t r) const {
    return means_[context * d_ + r];
  }
  std::size_t dim() const { return d_; }

  static void fold(GridPosterior& g, const GridLikelihood& lik, std::size_t context,
                   std::span<const double> xi) {
    lik.accumulate(g.log_unnormalized_, context, xi);
    ++g.records_;
  }
  static void finish(GridPosterior& g) { g.normalize(); }

 private:
  std::size_t d_;
  std::size_t contexts_;
  const GaussianRegressionModel* model_;
  std::vector<std::vector<double>> means_;
};

GridPosterior posterior_update_sequential(const GridPosterior& posterior,
                                          const GaussianRegressionModel& model,
                                          const ContextChain& chain, const Dataset& data) {
  data.validate(chain, model.xi_dim());
  GridPosterior g = posterior;
  if (data.empty()) return g;
  const GridLikelihood lik(g, model, chain);
  for (std::size_t i = 0; i < data.size(); ++i) {
    GridLikelihood::fold(g, lik, data.contexts[i], data.xi_at(i));
    GridLikelihood::finish(g);
  }
  return g;
}

GridPosterior posterior_update_sequential(const GridPosterior& posterior,
                                          const GaussianRegressionModel& model,
                                          const ContextChain& chain, std::size_t context,
                                          std::span<const double> xi) {
  GridPosterior g = posterior;
  const GridLikelihood lik(g, model, chain);
  GridLikelihood::fold(g, lik, context, xi);
  GridLikelihood::finish(g);
  return g;
}

GridPosterior posterior_update_batch(const PriorSpec& prior, const GridSpec& grid,
                                     const GaussianRegressionModel& model,
                                     const ContextChain& chain, const Dataset& data) {
  data.validate(chain, model.xi_dim());
  GridPosterior g = make_grid_prior(prior, grid);
  if (data.empty()) return g;
  const GridLikelihood lik(g, model, chain);
  for (std::size_t i = 0; i < data.size(); ++i) {
    GridLikelihood::fold(g, lik, data.contexts[i], data.xi_at(i));
  }
  GridLikelihood::finish(g);
  return g;
}

Eigen::VectorXd ConjugatePosterior::full_mean() const {
  Eigen::VectorXd out = pinned;
  for (std::size_t i = 0; i < free.size(); ++i) {
    out(static_cast<Eigen::Index>(free[i])) = mean(static_cast<Eigen::Index>(i));
  }
  return out;
}

ParameterMixture ConjugatePosterior::to_mixture(std::size_t order) const {
  const NodeSet gh = gauss_hermite_rule(order);
  const std::size_t nf = free.size();
  Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  if (llt.info() != Eigen::Success) throw RuntimeFailure("posterior covariance is not SPD");
  const Eigen::MatrixXd L = llt.matrixL();
  std::size_t count = 1;
  for (std::size_t i = 0; i < nf; ++i) count *= order;
  ParameterMixture m;
  m.dim = static_cast<std::size_t>(pinned.size());
  m.thetas.reserve(count * m.dim);
  m.weights.reserve(count);
  Eigen::VectorXd z(static_cast<Eigen::Index>(nf));
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t rem = k;
    double w = 1.0;
    for (std::size_t i = nf; i-- > 0;) {
      const std::size_t j = rem % order;
      rem /= order;
      z(static_cast<Eigen::Index>(i)) = gh.nodes[j];
      w *= gh.weights[j];
    }
    const Eigen::VectorXd tf = mean + L * z;
    Eigen::VectorXd th = pinned;
    for (std::size_t i = 0; i < nf; ++i) th(static_cast<Eigen::Index>(free[i])) = tf(static_cast<Eigen::Index>(i));
    m.thetas.insert(m.thetas.end(), th.data(), th.data() + th.size());
    m.weights.push_back(w);
  }
  return m;
}

ConjugatePosterior conjugate_update(const PriorSpec& prior, const GaussianRegressionModel& model,
                                    const ContextChain& chain, const Dataset& data,
                                    const std::vector<std::size_t>& free,
                                    const Eigen::VectorXd& pinned) {
  if (prior.kind != PriorSpec::Kind::gaussian) {
    throw ValidationError("conjugate update needs a Gaussian prior");
  }
  const std::size_t p = model.parameter_dim();
  if (static_cast<std::size_t>(pinned.size()) != p) throw ValidationError("pinned vector has the wrong dimension");
  const auto nf = static_cast<Eigen::Index>(free.size());
  if (prior.mean.size() != nf) throw ValidationError("prior dimension must equal the number of free coordinates");
  for (auto f : free) {
    if (f >= p) throw ValidationError("free coordinate index out of range");
  }
  data.validate(chain, model.xi_dim());

  // Precompute per-context blocks: X_f^T Sigma^{-1} X_f and the pinned offset.
  std::vector<bool> is_free(p, false);
  for (auto f : free) is_free[f] = true;
  Eigen::VectorXd theta_pinned = pinned;
  for (auto f : free) theta_pinned(static_cast<Eigen::Index>(f)) = 0.0;
  std::vector<Eigen::MatrixXd> xf(chain.size());
  std::vector<Eigen::VectorXd> offset(chain.size());
  for (std::size_t h = 0; h < chain.size(); ++h) {
    const Eigen::MatrixXd X = model.design(chain.embeddings[h]);
    xf[h].resize(X.rows(), nf);
    for (Eigen::Index i = 0; i < nf; ++i) xf[h].col(i) = X.col(static_cast<Eigen::Index>(free[static_cast<std::size_t>(i)]));
    offset[h] = X * theta_pinned;
  }

  ConjugatePosterior post;
  post.free = free;
  post.pinned = pinned;
  const Eigen::MatrixXd& Sinv = model.sigma_inv();
  Eigen::MatrixXd precision = prior.covariance.inverse();
  Eigen::VectorXd lin = precision * prior.mean;
  std::vector<std::size_t> count(chain.size(), 0);
  std::vector<Eigen::VectorXd> ysum(chain.size(), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.xi_dim())));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t h = data.contexts[i];
    ++count[h];
    ysum[h] += data.xi_vector(i) - offset[h];
  }
  for (std::size_t h = 0; h < chain.size(); ++h) {
    if (count[h] == 0) continue;
    precision += static_cast<double>(count[h]) * xf[h].transpose() * Sinv * xf[h];
    lin += xf[h].transpose() * Sinv * ysum[h];
  }
  precision = 0.5 * (precision + precision.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) throw RuntimeFailure("singular posterior precision");
  post.precision = precision;
  post.mean = llt.solve(lin);
  post.covariance = llt.solve(Eigen::MatrixXd::Identity(nf, nf));
  post.covariance = 0.5 * (post.covariance + post.covariance.transpose());
  return post;
}

double predictive_expectation(const ParameterMixture& posterior, const XiQuadrature& quadrature,
                              std::size_t context,
                              const std::function<double(std::span<const double>)>& integrand) {
  const NodeSet nodes = quadrature.predictive(posterior, context);
  double acc = 0.0;
  for (std::size_t j = 0; j < nodes.size(); ++j) acc += nodes.weights[j] * integrand(nodes.node(j));
  return acc;
}

double mass_outside_ball(const GridPosterior& posterior, const Eigen::VectorXd& center,
                         double radius) {
  if (!(radius > 0.0)) throw ValidationError("radius must be positive");
  if (static_cast<std::size_t>(center.size()) != posterior.dim()) {
    throw ValidationError("center has the wrong dimension");
  }
  double mass = 0.0;
  const double r2 = radius * radius;
  for (std::size_t k = 0; k < posterior.size(); ++k) {
    const auto th = posterior.theta_span(k);
    double d2 = 0.0;
    for (std::size_t i = 0; i < th.size(); ++i) {
      const double e = th[i] - center(static_cast<Eigen::Index>(i));
      d2 += e * e;
    }
    if (d2 > r2) mass += posterior.weight(k);
  }
  return std::min(mass, 1.0);
}

std::optional<double> log_sup_density_outside(const GridPosterior& posterior,
                                              std::span<const double> psi_values,
                                              double psi_star, double epsilon) {
  if (psi_values.size() != posterior.size()) throw ValidationError("psi_values size does not match the grid");
  double best = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t k = 0; k < posterior.size(); ++k) {
    if (psi_star - psi_values[k] >= epsilon) {
      any = true;
      best = std::max(best, posterior.log_weights()[k]);
    }
  }
  if (!any) return std::nullopt;
  return best - std::log(posterior.cell_volume());
}

double empirical_loglik(const GaussianRegressionModel& model, const ContextChain& chain,
                        const Dataset& data, const Eigen::VectorXd& theta) {
  if (data.empty()) throw ValidationError("empirical log-likelihood needs N >= 1");
  data.validate(chain, model.xi_dim());
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    acc += model.log_density(theta, data.xi_vector(i), chain.embeddings[data.contexts[i]]);
  }
  return acc / static_cast<double>(data.size());
}

double population_loglik(const GaussianRegressionModel& model, const ContextChain& chain,
                         const Eigen::VectorXd& theta, const Eigen::VectorXd& theta_star) {
  const Eigen::VectorXd nu = stationary_distribution(chain).weights;
  const auto d = static_cast<double>(model.xi_dim());
  double acc = 0.0;
  for (std::size_t h = 0; h < chain.size(); ++h) {
    const Eigen::VectorXd gap =
        model.mean(theta, chain.embeddings[h]) - model.mean(theta_star, chain.embeddings[h]);
    acc += nu(static_cast<Eigen::Index>(h)) *
           (model.log_normalizer() - 0.5 * (d + model.mahalanobis_sq(gap)));
  }
  return acc;
}

std::vector<double> grid_empirical_loglik(const GridPosterior& grid,
                                          const GaussianRegressionModel& model,
                                          const ContextChain& chain, const Dataset& data) {
  if (data.empty()) throw ValidationError("empirical log-likelihood needs N >= 1");
  data.validate(chain, model.xi_dim());
  const GridLikelihood lik(grid, model, chain);
  std::vector<double> acc(grid.size(), 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) lik.accumulate(acc, data.contexts[i], data.xi_at(i));
  const double n = static_cast<double>(data.size());
  for (double& v : acc) v = v / n + model.log_normalizer();
  return acc;
}

std::vector<double> grid_population_loglik(const GridPosterior& grid,
                                           const GaussianRegressionModel& model,
                                           const ContextChain& chain,
                                           const Eigen::VectorXd& theta_star) {
  const GridLikelihood lik(grid, model, chain);
  const Eigen::VectorXd nu = stationary_distribution(chain).weights;
  const auto d = static_cast<double>(model.xi_dim());
  std::vector<double> out(grid.size(), model.log_normalizer() - 0.5 * d);
  for (std::size_t h = 0; h < chain.size(); ++h) {
    const Eigen::VectorXd mstar = model.sigma_chol().triangularView<Eigen::Lower>().solve(
        model.mean(theta_star, chain.embeddings[h]));
    const double wgt = 0.5 * nu(static_cast<Eigen::Index>(h));
    for (std::size_t r = 0; r < lik.dim(); ++r) {
      simd::accumulate_sq_residual(out, lik.means(h, r), mstar(static_cast<Eigen::Index>(r)), -wgt);
    }
  }
  return out;
}

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double gaussian_l1_distance(const GaussianRegressionModel& model, const Eigen::VectorXd& mean_gap) {
  const double delta = std::sqrt(model.mahalanobis_sq(mean_gap));
  return 2.0 * (2.0 * standard_normal_cdf(0.5 * delta) - 1.0);
}

double predictive_l1_distance(const ParameterMixture& posterior,
                              const GaussianRegressionModel& model, const ContextChain& chain,
                              std::size_t context, const Eigen::VectorXd& theta_star) {
  if (context >= chain.size()) throw ValidationError("context index out of range");
  const auto& eta = chain.embeddings[context];
  const Eigen::VectorXd mstar = model.mean(theta_star, eta);
  double acc = 0.0;
  for (std::size_t k = 0; k < posterior.size(); ++k) {
    if (posterior.weights[k] == 0.0) continue;
    acc += posterior.weights[k] * gaussian_l1_distance(model, model.mean(posterior.theta(k), eta) - mstar);
  }
  return std::clamp(acc, 0.0, 2.0);
}

}  // namespace bayesoc
