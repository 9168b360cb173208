#include "revlab/markov.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace revlab {

namespace {

constexpr double kRowSumTol = 1e-12;
constexpr double kStationaryResidual = 1e-14;
constexpr long kMaxPowerIters = 1000000;

void reach(const Eigen::MatrixXd& p, bool transpose, std::vector<bool>& seen) {
  std::vector<int> stack{0};
  seen.assign(static_cast<std::size_t>(p.rows()), false);
  seen[0] = true;
  while (!stack.empty()) {
    const int s = stack.back();
    stack.pop_back();
    for (int t = 0; t < p.rows(); ++t) {
      const double edge = transpose ? p(t, s) : p(s, t);
      if (edge > 0.0 && !seen[static_cast<std::size_t>(t)]) {
        seen[static_cast<std::size_t>(t)] = true;
        stack.push_back(t);
      }
    }
  }
}

}  // namespace

MarkovChain::MarkovChain(Eigen::MatrixXd transition, std::vector<std::string> labels)
    : transition_(std::move(transition)), labels_(std::move(labels)) {
  if (transition_.rows() < 1 || transition_.rows() != transition_.cols())
    throw std::invalid_argument("transition matrix must be square and non-empty");
  for (int i = 0; i < transition_.rows(); ++i) {
    double row = 0.0;
    for (int j = 0; j < transition_.cols(); ++j) {
      const double p = transition_(i, j);
      if (!(p >= 0.0)) throw std::invalid_argument("transition entries must be non-negative and finite");
      row += p;
    }
    if (std::abs(row - 1.0) > kRowSumTol)
      throw std::invalid_argument("row " + std::to_string(i) + " sums to " + std::to_string(row) + ", not 1");
  }
  if (labels_.empty()) {
    for (int i = 0; i < n_states(); ++i) labels_.push_back("s" + std::to_string(i));
  }
  if (static_cast<int>(labels_.size()) != n_states())
    throw std::invalid_argument("label count must match state count");
}

bool MarkovChain::irreducible() const {
  std::vector<bool> fwd, bwd;
  reach(transition_, false, fwd);
  reach(transition_, true, bwd);
  for (std::size_t i = 0; i < fwd.size(); ++i)
    if (!fwd[i] || !bwd[i]) return false;
  return true;
}

const Eigen::VectorXd& MarkovChain::stationary() const {
  if (stationary_) return *stationary_;
  if (!irreducible()) throw std::runtime_error("no unique stationary distribution");

  const int n = n_states();
  Eigen::VectorXd sigma = Eigen::VectorXd::Constant(n, 1.0 / n);
  // power iteration on the half-lazy kernel (P + I)/2: same fixed point,
  // converges for periodic chains too; residual is measured against P
  for (long it = 0; it < kMaxPowerIters; ++it) {
    Eigen::VectorXd mapped = transition_.transpose() * sigma;
    if ((mapped - sigma).lpNorm<Eigen::Infinity>() <= kStationaryResidual) {
      sigma /= sigma.sum();
      stationary_ = sigma;
      return *stationary_;
    }
    sigma = 0.5 * (mapped + sigma);
    sigma /= sigma.sum();
  }
  throw std::runtime_error("stationary power iteration did not converge");
}

Eigen::VectorXd stationary_distribution(const MarkovChain& mc) {
  return mc.stationary();
}

double entropy_rate(const MarkovChain& mc) {
  const Eigen::VectorXd& sigma = mc.stationary();
  const Eigen::MatrixXd& p = mc.transition();
  double h = 0.0;
  for (int i = 0; i < mc.n_states(); ++i) {
    for (int j = 0; j < mc.n_states(); ++j) {
      const double pij = p(i, j);
      if (pij > 0.0) h -= sigma(i) * pij * std::log(pij);
    }
  }
  return h;
}

double perplexity_floor(double h) {
  if (h < 0.0) throw std::invalid_argument("entropy rate must be non-negative");
  return std::exp(h);
}

MarkovChain reverse_chain(const MarkovChain& mc) {
  const Eigen::VectorXd& sigma = mc.stationary();
  const Eigen::MatrixXd& p = mc.transition();
  const int n = mc.n_states();
  Eigen::MatrixXd q(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) q(i, j) = sigma(j) * p(j, i) / sigma(i);
    const double row = q.row(i).sum();  // 1 up to the stationary residual
    q.row(i) /= row;
  }
  return MarkovChain(std::move(q), mc.labels());
}

double time_reversal_divergence(const MarkovChain& mc) {
  const Eigen::VectorXd& sigma = mc.stationary();
  const Eigen::MatrixXd& p = mc.transition();
  const MarkovChain reversed = reverse_chain(mc);
  const Eigen::MatrixXd& q = reversed.transition();
  double a = 0.0;
  for (int i = 0; i < mc.n_states(); ++i) {
    for (int j = 0; j < mc.n_states(); ++j) {
      const double pij = p(i, j);
      if (pij <= 0.0) continue;
      if (q(i, j) <= 0.0) return std::numeric_limits<double>::infinity();
      a += sigma(i) * pij * std::log(pij / q(i, j));
    }
  }
  return std::max(a, 0.0);
}

double path_kl_bruteforce(const MarkovChain& mc, int n) {
  if (n < 1) throw std::invalid_argument("path length must be positive");
  const int k = mc.n_states();
  double guard = 1.0;
  for (int i = 0; i < n; ++i) {
    guard *= k;
    if (guard > 1e7) throw std::invalid_argument("path enumeration guard exceeded (n_states^n > 1e7)");
  }
  const Eigen::VectorXd& sigma = mc.stationary();
  const Eigen::MatrixXd& p = mc.transition();

  std::vector<int> path(static_cast<std::size_t>(n), 0);
  double kl = 0.0;
  while (true) {
    double prob_fwd = sigma(path[0]);
    for (int t = 0; t + 1 < n; ++t) prob_fwd *= p(path[static_cast<std::size_t>(t)], path[static_cast<std::size_t>(t + 1)]);
    if (prob_fwd > 0.0) {
      // reversed path measure evaluated directly on the reversed index order
      double prob_rev = sigma(path[static_cast<std::size_t>(n - 1)]);
      for (int t = n - 1; t > 0; --t) prob_rev *= p(path[static_cast<std::size_t>(t)], path[static_cast<std::size_t>(t - 1)]);
      if (prob_rev <= 0.0) return std::numeric_limits<double>::infinity();
      kl += prob_fwd * std::log(prob_fwd / prob_rev);
    }
    // odometer over paths, last index fastest
    int pos = n - 1;
    while (pos >= 0 && path[static_cast<std::size_t>(pos)] == k - 1) {
      path[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++path[static_cast<std::size_t>(pos)];
  }
  return kl / n;
}

std::vector<int> sample_sequence(const MarkovChain& mc, std::size_t length, Rng& rng) {
  const Eigen::VectorXd& sigma = mc.stationary();
  const Eigen::MatrixXd& p = mc.transition();
  std::vector<int> out;
  out.reserve(length);
  if (length == 0) return out;

  auto pick = [&](auto&& weights) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int i = 0; i < mc.n_states(); ++i) {
      acc += weights(i);
      if (u < acc) return i;
    }
    return mc.n_states() - 1;
  };

  int state = pick(sigma);
  out.push_back(state);
  for (std::size_t t = 1; t < length; ++t) {
    state = pick(p.row(state));
    out.push_back(state);
  }
  return out;
}

MarkovChain chain_from_json(const nlohmann::json& j) {
  const auto& rows = j.at("transition");
  const int n = static_cast<int>(rows.size());
  Eigen::MatrixXd p(n, n);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(rows[static_cast<std::size_t>(i)].size()) != n)
      throw std::invalid_argument("transition matrix must be square");
    for (int k = 0; k < n; ++k) p(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
  }
  std::vector<std::string> labels;
  if (j.contains("states")) labels = j.at("states").get<std::vector<std::string>>();
  return MarkovChain(std::move(p), std::move(labels));
}

nlohmann::ordered_json chain_to_json(const MarkovChain& mc) {
  nlohmann::ordered_json j;
  j["states"] = mc.labels();
  j["transition"] = nlohmann::ordered_json::array();
  for (int i = 0; i < mc.n_states(); ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (int k = 0; k < mc.n_states(); ++k) row.push_back(mc.transition()(i, k));
    j["transition"].push_back(std::move(row));
  }
  return j;
}

}  // namespace revlab
