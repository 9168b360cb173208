#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "revlab/bpe.hpp"
#include "revlab/markov.hpp"
#include "revlab/text.hpp"

namespace revlab {

// n-gram statistics over token sequences; contexts are (order-1)-grams.
struct NGramCounts {
  int order = 2;
  std::map<std::vector<int>, std::map<int, std::int64_t>> counts;  // context -> next -> count
  std::int64_t total = 0;

  void add_document(const TokenSeq& z);

  // Counts of the reversed text, derived by key reversal: the n-gram
  // (g_0..g_{n-1}) of the forward text appears reversed in the reversed
  // text. No second pass over the corpus is needed.
  NGramCounts reversed() const;
};

// Order-(order-1) Markov plug-in chain on observed contexts with add-lambda
// smoothing. Successors are restricted to tokens whose shifted context was
// itself observed; if the resulting graph is not strongly connected the
// chain is trimmed to the closed recurrent component with the largest count
// mass (a warning is appended). Labels are the decoded context strings.
MarkovChain plugin_chain(const NGramCounts& counts, const BpeTokenizer& t, double lambda,
                         std::vector<std::string>* warnings);

struct ContextContribution {
  std::string context;
  double stationary = 0.0;
  double kl = 0.0;  // this context's share of the time-reversal divergence
};

struct EstimateReport {
  double h_nats = 0.0;
  double a_nats = 0.0;
  int order = 2;
  double lambda = 0.5;
  std::int64_t token_count = 0;
  std::vector<std::string> warnings;
  std::vector<ContextContribution> contributions;
};

// Plug-in estimates of the entropy rate and the time-reversal divergence of
// the source behind a corpus.
EstimateReport estimate_from_corpus(const BpeTokenizer& t, const Corpus& d, int order, double lambda = 0.5);

nlohmann::ordered_json estimate_to_json(const EstimateReport& r);
std::string contributions_csv(const EstimateReport& r);

}  // namespace revlab
