#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "revlab/text.hpp"

namespace revlab {

// Deterministic byte-pair tokenizer over Unicode scalar values.
//
// Ids are dense: sorted base alphabet first, then one id per merge in
// training order. There are no special tokens and no pre-tokenization;
// whitespace is an ordinary symbol.
struct BpeTokenizer {
  std::vector<char32_t> base_alphabet;            // sorted, unique
  std::vector<std::pair<Str, Str>> merges;        // training order
  std::map<Str, int> vocab;                       // token string -> id
  std::vector<Str> id_to_token;                   // dense inverse of vocab

  // training diagnostics: steps whose outcome depended on the tie-break
  // rule, and self-pair merges applied over odd runs (both are sources of
  // forward/reverse training divergence)
  long long tie_events = 0;
  long long uneven_run_events = 0;

  int vocab_size() const { return static_cast<int>(id_to_token.size()); }
  bool in_alphabet(char32_t c) const;
  const Str& token_string(int id) const;
};

// Greedy frequency-based training: at each step the most frequent adjacent
// pair is merged; ties break by lexicographic order of (left, right) token
// strings. Stops at target_vocab or when no pair occurs at least twice.
BpeTokenizer train_bpe(const Corpus& d, int target_vocab);

// Character-level tokenizer (zero merges) over the corpus alphabet.
BpeTokenizer char_tokenizer(const Corpus& d);

// Applies merges in training order. Out-of-alphabet symbols are an error
// (there is no UNK token); the message names the symbol and its offset.
TokenSeq encode(const BpeTokenizer& t, const Str& s);
Str decode(const BpeTokenizer& t, const TokenSeq& z);

nlohmann::ordered_json tokenizer_to_json(const BpeTokenizer& t);
BpeTokenizer tokenizer_from_json(const nlohmann::json& j);

// Partial bijection between two vocabularies, id to id.
struct VocabBijection {
  std::map<int, int> forward;
  std::map<int, int> inverse;
  double coverage = 0.0;  // mapped fraction of the source vocab

  bool total() const { return coverage == 1.0; }
  bool fully_maps(const TokenSeq& z) const;
  TokenSeq map_tokens(const TokenSeq& z) const;  // throws on unmapped id
};

// Canonical witness candidate: map each token string to its reversal when
// the reversed string exists in the target vocab. Linear time, injective.
VocabBijection propose_reversal_bijection(const BpeTokenizer& t_fwd, const BpeTokenizer& t_rev);

struct StabilityViolation {
  std::size_t doc_index = 0;
  Str doc;
  TokenSeq forward_tokens;  // t_fwd(doc)
  TokenSeq reverse_tokens;  // t_rev(reversed doc)
};

struct StabilityReport {
  double coverage = 0.0;
  double seq_stable_fraction = 0.0;
  double merge_agreement = 0.0;
  std::size_t docs_checked = 0;
  std::size_t docs_stable = 0;
  std::vector<StabilityViolation> violating_examples;

  bool stable() const { return seq_stable_fraction == 1.0; }
};

// Checks, per document, that encoding the reversed document equals the
// relabeled reversal of the forward encoding (exact sequence equality).
// Contract: t_rev was trained on reverse_corpus(d).
StabilityReport stability_report(const BpeTokenizer& t_fwd, const BpeTokenizer& t_rev,
                                 const VocabBijection& pi, const Corpus& d,
                                 std::size_t max_examples = 10);

nlohmann::ordered_json stability_to_json(const StabilityReport& r);
std::string stability_table(const StabilityReport& r);

}  // namespace revlab
