#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bayesoc {

// Finite, time-homogeneous Markov chain of contexts. Entry (h, h') of
// `transition` is the probability of moving from context h to h'. Each context
// carries an embedding vector used by the regression model; all embeddings
// share one dimension.
struct ContextChain {
  std::vector<std::string> states;
  std::vector<Eigen::VectorXd> embeddings;
  Eigen::MatrixXd transition;
  std::size_t initial_context = 0;

  std::size_t size() const { return states.size(); }
  std::size_t embedding_dim() const {
    return embeddings.empty() ? 0 : static_cast<std::size_t>(embeddings.front().size());
  }
};

// Builds a chain; missing embeddings default to one-hot vectors of dimension H.
ContextChain make_chain(std::vector<std::string> states, Eigen::MatrixXd transition,
                        std::size_t initial_context = 0,
                        std::optional<std::vector<Eigen::VectorXd>> embeddings = std::nullopt);

// Empty iff every ContextChain invariant holds.
std::vector<std::string> validate_chain(const ContextChain& chain);

// Primitivity test: all entries of P^K are positive for K = (H-1)^2 + 1.
bool is_irreducible_aperiodic(const ContextChain& chain);

struct StationaryDistribution {
  Eigen::VectorXd weights;
};

// Unique nu with nu P = nu. Direct balance solve for H <= 64, power iteration
// above. Throws ValidationError("chain not ergodic") otherwise.
StationaryDistribution stationary_distribution(const ContextChain& chain);

// path[0] is the initial context; later entries are drawn from the current row.
std::vector<std::size_t> simulate_context_path(const ContextChain& chain,
                                               std::size_t length, std::uint64_t seed);

}  // namespace bayesoc
