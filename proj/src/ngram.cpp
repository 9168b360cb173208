#include "revlab/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace revlab {

namespace {

std::vector<int> shifted(const std::vector<int>& context, int next) {
  std::vector<int> out(context.begin() + 1, context.end());
  out.push_back(next);
  return out;
}

// Tarjan strongly connected components over an adjacency list; returns the
// component id per node, ids in reverse topological order of the condensation.
std::vector<int> tarjan_scc(const std::vector<std::vector<int>>& adj, int& n_components) {
  const int n = static_cast<int>(adj.size());
  std::vector<int> index(n, -1), low(n, 0), comp(n, -1);
  std::vector<bool> on_stack(n, false);
  std::vector<int> stack;
  int next_index = 0;
  n_components = 0;

  struct Frame {
    int node;
    std::size_t edge;
  };
  for (int root = 0; root < n; ++root) {
    if (index[root] != -1) continue;
    std::vector<Frame> call{{root, 0}};
    index[root] = low[root] = next_index++;
    stack.push_back(root);
    on_stack[root] = true;
    while (!call.empty()) {
      Frame& f = call.back();
      if (f.edge < adj[static_cast<std::size_t>(f.node)].size()) {
        const int w = adj[static_cast<std::size_t>(f.node)][f.edge++];
        if (index[w] == -1) {
          index[w] = low[w] = next_index++;
          stack.push_back(w);
          on_stack[w] = true;
          call.push_back({w, 0});
        } else if (on_stack[w]) {
          low[f.node] = std::min(low[f.node], index[w]);
        }
      } else {
        if (low[f.node] == index[f.node]) {
          while (true) {
            const int w = stack.back();
            stack.pop_back();
            on_stack[w] = false;
            comp[w] = n_components;
            if (w == f.node) break;
          }
          ++n_components;
        }
        const int child = f.node;
        call.pop_back();
        if (!call.empty()) low[call.back().node] = std::min(low[call.back().node], low[child]);
      }
    }
  }
  return comp;
}

}  // namespace

void NGramCounts::add_document(const TokenSeq& z) {
  if (static_cast<int>(z.size()) < order) return;
  for (std::size_t i = 0; i + static_cast<std::size_t>(order) <= z.size(); ++i) {
    std::vector<int> context(z.begin() + static_cast<std::ptrdiff_t>(i),
                             z.begin() + static_cast<std::ptrdiff_t>(i) + order - 1);
    ++counts[std::move(context)][z[i + static_cast<std::size_t>(order) - 1]];
    ++total;
  }
}

NGramCounts NGramCounts::reversed() const {
  NGramCounts out;
  out.order = order;
  out.total = total;
  for (const auto& [context, successors] : counts) {
    for (const auto& [next, n] : successors) {
      std::vector<int> gram = context;
      gram.push_back(next);
      std::reverse(gram.begin(), gram.end());
      std::vector<int> rcontext(gram.begin(), gram.end() - 1);
      out.counts[std::move(rcontext)][gram.back()] += n;
    }
  }
  return out;
}

MarkovChain plugin_chain(const NGramCounts& counts, const BpeTokenizer& t, double lambda,
                         std::vector<std::string>* warnings) {
  if (counts.counts.empty()) throw std::invalid_argument("no n-grams observed; corpus too small for this order");
  if (lambda < 0.0) throw std::invalid_argument("smoothing lambda must be non-negative");

  // observed contexts: every (order-1)-gram that occurs, including the
  // final one of each document (reachable as a shifted context)
  std::set<std::vector<int>> observed;
  for (const auto& [context, successors] : counts.counts) {
    observed.insert(context);
    for (const auto& [next, n] : successors) observed.insert(shifted(context, next));
  }

  std::vector<std::vector<int>> states(observed.begin(), observed.end());
  auto state_index = [&](const std::vector<int>& c) -> int {
    const auto it = std::lower_bound(states.begin(), states.end(), c);
    if (it == states.end() || *it != c) return -1;
    return static_cast<int>(it - states.begin());
  };

  // successor tokens allowed from each context: those whose shifted context
  // is itself observed
  const std::set<int> alphabet = [&] {
    std::set<int> a;
    for (const auto& c : states)
      for (int id : c) a.insert(id);
    for (const auto& [context, successors] : counts.counts)
      for (const auto& [next, n] : successors) a.insert(next);
    return a;
  }();

  std::vector<std::vector<std::pair<int, int>>> allowed(states.size());  // (token, target state)
  std::vector<std::vector<int>> adj(states.size());
  for (std::size_t s = 0; s < states.size(); ++s) {
    for (int v : alphabet) {
      const int tgt = state_index(shifted(states[s], v));
      if (tgt >= 0) {
        allowed[s].emplace_back(v, tgt);
        adj[s].push_back(tgt);
      }
    }
  }

  // trim to a closed strongly connected component when necessary
  int n_comp = 0;
  const std::vector<int> comp = tarjan_scc(adj, n_comp);
  std::vector<bool> keep(states.size(), true);
  if (n_comp > 1) {
    std::vector<bool> terminal(static_cast<std::size_t>(n_comp), true);
    std::vector<double> mass(static_cast<std::size_t>(n_comp), 0.0);
    std::vector<bool> has_internal_edge(static_cast<std::size_t>(n_comp), false);
    for (std::size_t s = 0; s < states.size(); ++s) {
      const int c = comp[s];
      const auto it = counts.counts.find(states[s]);
      if (it != counts.counts.end())
        for (const auto& [next, n] : it->second) mass[static_cast<std::size_t>(c)] += static_cast<double>(n);
      for (int tgt : adj[s]) {
        if (comp[static_cast<std::size_t>(tgt)] != c)
          terminal[static_cast<std::size_t>(c)] = false;
        else
          has_internal_edge[static_cast<std::size_t>(c)] = true;
      }
    }
    // prefer a closed (terminal) component; otherwise condition the chain on
    // staying inside the heaviest component that has any internal edge
    int best = -1;
    for (bool require_terminal : {true, false}) {
      for (int c = 0; c < n_comp; ++c) {
        if (!has_internal_edge[static_cast<std::size_t>(c)]) continue;
        if (require_terminal && !terminal[static_cast<std::size_t>(c)]) continue;
        if (best == -1 || mass[static_cast<std::size_t>(c)] > mass[static_cast<std::size_t>(best)]) best = c;
      }
      if (best != -1) break;
    }
    if (best == -1) throw std::runtime_error("too little data to form an irreducible context chain");
    for (std::size_t s = 0; s < states.size(); ++s) keep[s] = (comp[s] == best);
    if (warnings) {
      std::size_t kept = 0;
      for (bool k : keep) kept += k;
      warnings->push_back("plug-in chain restricted to recurrent component (" + std::to_string(kept) + " of " +
                          std::to_string(states.size()) + " contexts)");
    }
  }

  std::vector<int> dense(states.size(), -1);
  std::vector<std::vector<int>> kept_states;
  for (std::size_t s = 0; s < states.size(); ++s) {
    if (keep[s]) {
      dense[s] = static_cast<int>(kept_states.size());
      kept_states.push_back(states[s]);
    }
  }

  const int n = static_cast<int>(kept_states.size());
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  std::vector<std::string> labels;
  labels.reserve(static_cast<std::size_t>(n));
  for (std::size_t s = 0; s < states.size(); ++s) {
    if (!keep[s]) continue;
    const int row = dense[s];
    const auto it = counts.counts.find(states[s]);
    double denom = 0.0;
    std::vector<std::pair<int, double>> weights;  // (target, weight)
    for (const auto& [v, tgt] : allowed[s]) {
      if (!keep[static_cast<std::size_t>(tgt)]) continue;
      std::int64_t c = 0;
      if (it != counts.counts.end()) {
        const auto cit = it->second.find(v);
        if (cit != it->second.end()) c = cit->second;
      }
      const double w = static_cast<double>(c) + lambda;
      weights.emplace_back(dense[static_cast<std::size_t>(tgt)], w);
      denom += w;
    }
    if (denom <= 0.0) throw std::runtime_error("context with no usable successors after smoothing");
    for (const auto& [tgt, w] : weights) p(row, tgt) = w / denom;
    labels.push_back(utf8_encode(decode(t, states[s])));
  }

  return MarkovChain(std::move(p), std::move(labels));
}

EstimateReport estimate_from_corpus(const BpeTokenizer& t, const Corpus& d, int order, double lambda) {
  if (order < 2) throw std::invalid_argument("order must be at least 2");

  EstimateReport r;
  r.order = order;
  r.lambda = lambda;

  NGramCounts counts;
  counts.order = order;
  for (std::size_t i = 0; i < d.docs.size(); ++i) {
    TokenSeq z;
    try {
      z = encode(t, d.docs[i]);
    } catch (const std::exception& e) {
      throw std::runtime_error("document " + std::to_string(i) + ": " + e.what());
    }
    r.token_count += static_cast<std::int64_t>(z.size());
    counts.add_document(z);
  }

  const MarkovChain chain = plugin_chain(counts, t, lambda, &r.warnings);
  if (r.token_count < 10 * chain.n_states())
    r.warnings.push_back("sparse data: fewer than 10 tokens per context (" + std::to_string(r.token_count) +
                         " tokens, " + std::to_string(chain.n_states()) + " contexts)");

  r.h_nats = entropy_rate(chain);
  r.a_nats = time_reversal_divergence(chain);

  const Eigen::VectorXd& sigma = chain.stationary();
  const MarkovChain reversed = reverse_chain(chain);
  const Eigen::MatrixXd& p = chain.transition();
  const Eigen::MatrixXd& q = reversed.transition();
  for (int i = 0; i < chain.n_states(); ++i) {
    double kl = 0.0;
    for (int j = 0; j < chain.n_states(); ++j) {
      if (p(i, j) <= 0.0) continue;
      if (q(i, j) <= 0.0) {
        kl = std::numeric_limits<double>::infinity();
        break;
      }
      kl += p(i, j) * std::log(p(i, j) / q(i, j));
    }
    r.contributions.push_back({chain.labels()[static_cast<std::size_t>(i)], sigma(i), sigma(i) * kl});
  }
  return r;
}

nlohmann::ordered_json estimate_to_json(const EstimateReport& r) {
  const double ln2 = std::log(2.0);
  nlohmann::ordered_json j;
  j["h_nats"] = r.h_nats;
  j["h_bits"] = r.h_nats / ln2;
  j["A_nats"] = r.a_nats;
  j["A_bits"] = r.a_nats / ln2;
  j["order"] = r.order;
  j["lambda"] = r.lambda;
  j["token_count"] = r.token_count;
  j["warnings"] = r.warnings;
  return j;
}

std::string contributions_csv(const EstimateReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "context,stationary,kl_contribution\n";
  for (const auto& c : r.contributions) {
    std::string escaped = c.context;
    for (std::size_t pos = 0; (pos = escaped.find('"', pos)) != std::string::npos; pos += 2)
      escaped.replace(pos, 1, "\"\"");
    out << '"' << escaped << "\"," << c.stationary << ',' << c.kl << '\n';
  }
  return out.str();
}

}  // namespace revlab
