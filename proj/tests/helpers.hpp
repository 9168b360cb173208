#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "revlab/markov.hpp"
#include "revlab/rng.hpp"
#include "revlab/text.hpp"

namespace revlab::testing {

// random row-stochastic matrix with strictly positive entries (irreducible)
inline MarkovChain random_chain(int n_states, Rng& rng) {
  Eigen::MatrixXd p(n_states, n_states);
  for (int i = 0; i < n_states; ++i) {
    double row = 0.0;
    for (int j = 0; j < n_states; ++j) {
      p(i, j) = 0.05 + rng.uniform();
      row += p(i, j);
    }
    p.row(i) /= row;
  }
  return MarkovChain(std::move(p));
}

// reversible chain built from a symmetric positive weight matrix
// (detailed balance holds with sigma proportional to row sums)
inline MarkovChain random_reversible_chain(int n_states, Rng& rng) {
  Eigen::MatrixXd w(n_states, n_states);
  for (int i = 0; i < n_states; ++i)
    for (int j = i; j < n_states; ++j) w(i, j) = w(j, i) = 0.05 + rng.uniform();
  Eigen::MatrixXd p(n_states, n_states);
  for (int i = 0; i < n_states; ++i) p.row(i) = w.row(i) / w.row(i).sum();
  return MarkovChain(std::move(p));
}

// the asymmetric three-state cycle used as a worked example throughout:
// P(i -> i+1) = 0.7, P(i -> i-1) = 0.2, P(i -> i) = 0.1 (indices mod 3)
inline MarkovChain three_state_cycle() {
  Eigen::MatrixXd p(3, 3);
  p << 0.1, 0.7, 0.2,
       0.2, 0.1, 0.7,
       0.7, 0.2, 0.1;
  return MarkovChain(std::move(p), {"a", "b", "c"});
}

// exact block entropy H(X_1^n) of a stationary chain by path enumeration
inline double block_entropy_bruteforce(const MarkovChain& mc, int n) {
  const Eigen::VectorXd& sigma = mc.stationary();
  const Eigen::MatrixXd& p = mc.transition();
  const int k = mc.n_states();
  std::vector<int> path(static_cast<std::size_t>(n), 0);
  double h = 0.0;
  while (true) {
    double prob = sigma(path[0]);
    for (int t = 0; t + 1 < n; ++t) prob *= p(path[static_cast<std::size_t>(t)], path[static_cast<std::size_t>(t + 1)]);
    if (prob > 0.0) h -= prob * std::log(prob);
    int pos = n - 1;
    while (pos >= 0 && path[static_cast<std::size_t>(pos)] == k - 1) {
      path[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++path[static_cast<std::size_t>(pos)];
  }
  return h;
}

// random string over a small mixed alphabet including multi-byte code points
inline Str random_unicode_string(Rng& rng, int max_len) {
  static const char32_t pool[] = {U'a', U'b', U'c', U' ', U'\n', U'é', U'ß', U'Ω', U'中', U'🙂', U' '};
  const int len = rng.below(max_len + 1);
  Str s;
  for (int i = 0; i < len; ++i) s.push_back(pool[rng.below(static_cast<int>(std::size(pool)))]);
  return s;
}

inline Corpus corpus_from_utf8(const std::vector<std::string>& docs) {
  Corpus c;
  for (const auto& d : docs) c.docs.push_back(utf8_decode(d));
  return c;
}

}  // namespace revlab::testing
