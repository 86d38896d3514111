#include "bayesoc/context_chain.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include "bayesoc/error.hpp"
#include "bayesoc/rng.hpp"

namespace bayesoc {
namespace {

std::string fmt_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

Eigen::MatrixXi positivity_pattern(const Eigen::MatrixXd& m) {
  return (m.array() > 0.0).cast<int>().matrix();
}

Eigen::MatrixXi boolean_product(const Eigen::MatrixXi& a, const Eigen::MatrixXi& b) {
  Eigen::MatrixXi c = a * b;
  return (c.array() > 0).cast<int>().matrix();
}

}  // namespace

ContextChain make_chain(std::vector<std::string> states, Eigen::MatrixXd transition,
                        std::size_t initial_context,
                        std::optional<std::vector<Eigen::VectorXd>> embeddings) {
  ContextChain chain;
  const auto h = states.size();
  chain.states = std::move(states);
  chain.transition = std::move(transition);
  chain.initial_context = initial_context;
  if (embeddings) {
    chain.embeddings = std::move(*embeddings);
  } else {
    for (std::size_t i = 0; i < h; ++i) {
      chain.embeddings.push_back(Eigen::VectorXd::Unit(static_cast<Eigen::Index>(h),
                                                       static_cast<Eigen::Index>(i)));
    }
  }
  return chain;
}

std::vector<std::string> validate_chain(const ContextChain& chain) {
  std::vector<std::string> out;
  const auto h = static_cast<Eigen::Index>(chain.size());
  if (h == 0) {
    out.emplace_back("chain has no states");
    return out;
  }
  if (chain.transition.rows() != h || chain.transition.cols() != h) {
    out.push_back("transition matrix is " + std::to_string(chain.transition.rows()) + "x" +
                  std::to_string(chain.transition.cols()) + ", expected " +
                  std::to_string(h) + "x" + std::to_string(h));
    return out;
  }
  for (Eigen::Index i = 0; i < h; ++i) {
    for (Eigen::Index j = 0; j < h; ++j) {
      const double v = chain.transition(i, j);
      if (!std::isfinite(v)) {
        out.push_back("non-finite entry at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      } else if (v < 0.0) {
        out.push_back("negative entry at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      } else if (v > 1.0) {
        out.push_back("entry above 1 at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
    const double s = chain.transition.row(i).sum();
    if (std::abs(s - 1.0) > 1e-12) {
      out.push_back("row " + std::to_string(i) + " sums to " + fmt_number(s));
    }
  }
  std::set<std::string> seen;
  for (const auto& label : chain.states) {
    if (!seen.insert(label).second) out.push_back("duplicate state label '" + label + "'");
  }
  if (chain.embeddings.size() != chain.size()) {
    out.push_back("expected " + std::to_string(chain.size()) + " embeddings, got " +
                  std::to_string(chain.embeddings.size()));
  } else {
    const auto dim = chain.embeddings.front().size();
    for (std::size_t i = 0; i < chain.embeddings.size(); ++i) {
      if (chain.embeddings[i].size() != dim) {
        out.push_back("embedding " + std::to_string(i) + " has dimension " +
                      std::to_string(chain.embeddings[i].size()) + ", expected " +
                      std::to_string(dim));
      }
    }
  }
  if (chain.initial_context >= chain.size()) {
    out.push_back("initial_context " + std::to_string(chain.initial_context) + " out of range");
  }
  return out;
}

bool is_irreducible_aperiodic(const ContextChain& chain) {
  const auto h = chain.size();
  if (h == 0) return false;
  // P^K > 0 with K = (H-1)^2 + 1, by binary exponentiation on the sign pattern.
  std::size_t k = (h - 1) * (h - 1) + 1;
  Eigen::MatrixXi base = positivity_pattern(chain.transition);
  Eigen::MatrixXi result = Eigen::MatrixXi::Identity(static_cast<Eigen::Index>(h),
                                                     static_cast<Eigen::Index>(h));
  while (k > 0) {
    if (k & 1U) result = boolean_product(result, base);
    base = boolean_product(base, base);
    k >>= 1U;
  }
  return (result.array() > 0).all();
}

StationaryDistribution stationary_distribution(const ContextChain& chain) {
  if (!validate_chain(chain).empty() || !is_irreducible_aperiodic(chain)) {
    throw ValidationError("chain not ergodic");
  }
  const auto h = static_cast<Eigen::Index>(chain.size());
  Eigen::VectorXd nu;
  if (h <= 64) {
    // (P^T - I) nu = 0 with the last equation replaced by sum(nu) = 1.
    Eigen::MatrixXd a = chain.transition.transpose() - Eigen::MatrixXd::Identity(h, h);
    a.row(h - 1).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(h);
    rhs(h - 1) = 1.0;
    nu = a.fullPivLu().solve(rhs);
  } else {
    nu = Eigen::VectorXd::Constant(h, 1.0 / static_cast<double>(h));
    for (int it = 0; it < 100000; ++it) {
      Eigen::VectorXd next = chain.transition.transpose() * nu;
      next /= next.sum();
      const double resid = (next - nu).lpNorm<Eigen::Infinity>();
      nu = std::move(next);
      if (resid < 1e-14) break;
    }
  }
  nu = nu.cwiseMax(0.0);
  nu /= nu.sum();
  return {nu};
}

std::vector<std::size_t> simulate_context_path(const ContextChain& chain,
                                               std::size_t length, std::uint64_t seed) {
  if (length == 0) throw ValidationError("path length must be positive");
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::size_t> path(length);
  path[0] = chain.initial_context;
  const auto h = static_cast<Eigen::Index>(chain.size());
  for (std::size_t t = 1; t < length; ++t) {
    const auto row = static_cast<Eigen::Index>(path[t - 1]);
    const double u = unif(rng);
    double acc = 0.0;
    Eigen::Index next = h - 1;
    for (Eigen::Index j = 0; j < h; ++j) {
      acc += chain.transition(row, j);
      if (u < acc) {
        next = j;
        break;
      }
    }
    // Guard against a trailing zero-probability column absorbing rounding slack.
    while (next > 0 && chain.transition(row, next) == 0.0) --next;
    path[t] = static_cast<std::size_t>(next);
  }
  return path;
}

}  // namespace bayesoc
