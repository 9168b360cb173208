#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "revlab/rng.hpp"

namespace revlab {

// Finite-state chain with a row-stochastic transition matrix. Immutable
// after construction; the stationary distribution is computed on first use
// and cached (first touch is not thread-safe, everything after is).
class MarkovChain {
 public:
  explicit MarkovChain(Eigen::MatrixXd transition, std::vector<std::string> labels = {});

  int n_states() const { return static_cast<int>(transition_.rows()); }
  const Eigen::MatrixXd& transition() const { return transition_; }
  const std::vector<std::string>& labels() const { return labels_; }

  // Unique stationary vector; throws std::runtime_error for reducible
  // chains ("no unique stationary distribution").
  const Eigen::VectorXd& stationary() const;

  bool irreducible() const;

 private:
  Eigen::MatrixXd transition_;
  std::vector<std::string> labels_;
  mutable std::optional<Eigen::VectorXd> stationary_;
};

Eigen::VectorXd stationary_distribution(const MarkovChain& mc);

// nats per token; the Shannon rate of the stationary process
double entropy_rate(const MarkovChain& mc);

// exp(h); the perplexity a perfect model attains
double perplexity_floor(double h);

// Time-reversed chain: Q_ij = sigma_j P_ji / sigma_i. Keeps the same
// stationary vector and labels. An involution up to round-off.
MarkovChain reverse_chain(const MarkovChain& mc);

// Per-token KL rate between the forward process and its time reversal
// (entropy production rate). Returns +infinity when the support of the
// transition matrix is asymmetric; that is a value, not an error.
double time_reversal_divergence(const MarkovChain& mc);

// Exact (1/n) KL between the length-n forward path measure (started from
// the stationary vector) and the reversed path measure, by enumerating all
// n_states^n paths. Oracle for the closed form above. Guard: paths <= 1e7.
double path_kl_bruteforce(const MarkovChain& mc, int n);

// Deterministic sampling of a stationary path (initial state from the
// stationary vector, steps by inverse CDF in state order).
std::vector<int> sample_sequence(const MarkovChain& mc, std::size_t length, Rng& rng);

// JSON spec: {"states": ["a", ...], "transition": [[...], ...]}
MarkovChain chain_from_json(const nlohmann::json& j);
nlohmann::ordered_json chain_to_json(const MarkovChain& mc);

}  // namespace revlab
