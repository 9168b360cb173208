#include "revlab/bpe.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

namespace revlab {

namespace {

using Pair = std::pair<int, int>;

std::vector<int> replace_pair(const std::vector<int>& seq, int left, int right, int merged) {
  std::vector<int> out;
  out.reserve(seq.size());
  std::size_t i = 0;
  while (i < seq.size()) {
    if (i + 1 < seq.size() && seq[i] == left && seq[i + 1] == right) {
      out.push_back(merged);
      i += 2;
    } else {
      out.push_back(seq[i]);
      ++i;
    }
  }
  return out;
}

// odd runs of length >= 3 of a self-pair token bracket differently under
// left-to-right and right-to-left scans; record them as a divergence source
long long count_uneven_runs(const std::vector<int>& seq, int tok) {
  long long events = 0;
  std::size_t i = 0;
  while (i < seq.size()) {
    if (seq[i] != tok) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < seq.size() && seq[j] == tok) ++j;
    const std::size_t run = j - i;
    if (run >= 3 && run % 2 == 1) ++events;
    i = j;
  }
  return events;
}

}  // namespace

bool BpeTokenizer::in_alphabet(char32_t c) const {
  return std::binary_search(base_alphabet.begin(), base_alphabet.end(), c);
}

const Str& BpeTokenizer::token_string(int id) const {
  if (id < 0 || id >= vocab_size()) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return id_to_token[static_cast<std::size_t>(id)];
}

BpeTokenizer train_bpe(const Corpus& d, int target_vocab) {
  if (d.empty()) throw std::invalid_argument("empty corpus");

  std::set<char32_t> alphabet;
  for (const Str& doc : d.docs)
    for (char32_t c : doc) alphabet.insert(c);

  if (target_vocab < static_cast<int>(alphabet.size()))
    throw std::invalid_argument("vocab too small: target " + std::to_string(target_vocab) + " < alphabet size " +
                                std::to_string(alphabet.size()));

  BpeTokenizer t;
  t.base_alphabet.assign(alphabet.begin(), alphabet.end());
  for (char32_t c : t.base_alphabet) {
    const int id = t.vocab_size();
    Str s(1, c);
    t.vocab.emplace(s, id);
    t.id_to_token.push_back(std::move(s));
  }

  // working corpus: distinct docs with multiplicities
  std::vector<std::pair<std::vector<int>, long long>> work;
  for (const auto& [doc, mult] : d.multiplicities()) {
    std::vector<int> ids;
    ids.reserve(doc.size());
    for (char32_t c : doc) ids.push_back(t.vocab.at(Str(1, c)));
    work.emplace_back(std::move(ids), static_cast<long long>(mult));
  }

  while (t.vocab_size() < target_vocab) {
    std::map<Pair, long long> counts;
    for (const auto& [seq, mult] : work) {
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) counts[{seq[i], seq[i + 1]}] += mult;
    }
    if (counts.empty()) break;

    long long best = 0;
    for (const auto& [pair, n] : counts) best = std::max(best, n);
    if (best < 2) break;

    // tie-break: lexicographically smallest (left, right) token strings
    std::vector<Pair> candidates;
    for (const auto& [pair, n] : counts)
      if (n == best) candidates.push_back(pair);
    if (candidates.size() > 1) ++t.tie_events;
    const Pair chosen = *std::min_element(candidates.begin(), candidates.end(), [&](const Pair& a, const Pair& b) {
      const auto key_a = std::make_pair(t.id_to_token[static_cast<std::size_t>(a.first)],
                                        t.id_to_token[static_cast<std::size_t>(a.second)]);
      const auto key_b = std::make_pair(t.id_to_token[static_cast<std::size_t>(b.first)],
                                        t.id_to_token[static_cast<std::size_t>(b.second)]);
      return key_a < key_b;
    });

    const Str left = t.id_to_token[static_cast<std::size_t>(chosen.first)];
    const Str right = t.id_to_token[static_cast<std::size_t>(chosen.second)];
    const int merged = t.vocab_size();
    t.merges.emplace_back(left, right);
    Str product = left + right;
    t.vocab.emplace(product, merged);
    t.id_to_token.push_back(std::move(product));

    for (auto& [seq, mult] : work) {
      if (chosen.first == chosen.second) t.uneven_run_events += count_uneven_runs(seq, chosen.first) * mult;
      seq = replace_pair(seq, chosen.first, chosen.second, merged);
    }
  }
  return t;
}

BpeTokenizer char_tokenizer(const Corpus& d) {
  if (d.empty()) throw std::invalid_argument("empty corpus");
  std::set<char32_t> alphabet;
  for (const Str& doc : d.docs)
    for (char32_t c : doc) alphabet.insert(c);
  return train_bpe(d, static_cast<int>(alphabet.size()));
}

TokenSeq encode(const BpeTokenizer& t, const Str& s) {
  TokenSeq ids;
  ids.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!t.in_alphabet(s[i]))
      throw std::invalid_argument("symbol '" + utf8_encode(Str(1, s[i])) + "' at offset " + std::to_string(i) +
                                  " is not in the tokenizer alphabet");
    ids.push_back(t.vocab.at(Str(1, s[i])));
  }
  for (const auto& [left, right] : t.merges) {
    if (ids.size() < 2) break;
    const int lid = t.vocab.at(left);
    const int rid = t.vocab.at(right);
    const int mid = t.vocab.at(left + right);
    ids = replace_pair(ids, lid, rid, mid);
  }
  return ids;
}

Str decode(const BpeTokenizer& t, const TokenSeq& z) {
  Str out;
  for (int id : z) out += t.token_string(id);
  return out;
}

nlohmann::ordered_json tokenizer_to_json(const BpeTokenizer& t) {
  nlohmann::ordered_json j;
  j["base_alphabet"] = nlohmann::ordered_json::array();
  for (char32_t c : t.base_alphabet) j["base_alphabet"].push_back(utf8_encode(Str(1, c)));
  j["merges"] = nlohmann::ordered_json::array();
  for (const auto& [l, r] : t.merges) j["merges"].push_back({utf8_encode(l), utf8_encode(r)});
  nlohmann::ordered_json vocab = nlohmann::ordered_json::object();
  for (const auto& [tok, id] : t.vocab) vocab[utf8_encode(tok)] = id;
  j["vocab"] = std::move(vocab);
  return j;
}

BpeTokenizer tokenizer_from_json(const nlohmann::json& j) {
  BpeTokenizer t;
  for (const auto& s : j.at("base_alphabet")) {
    const Str cp = utf8_decode(s.get<std::string>());
    if (cp.size() != 1) throw std::invalid_argument("base_alphabet entries must be single code points");
    t.base_alphabet.push_back(cp[0]);
  }
  if (!std::is_sorted(t.base_alphabet.begin(), t.base_alphabet.end()) ||
      std::adjacent_find(t.base_alphabet.begin(), t.base_alphabet.end()) != t.base_alphabet.end())
    throw std::invalid_argument("base_alphabet must be sorted and unique");

  std::set<Str> available;
  for (char32_t c : t.base_alphabet) available.insert(Str(1, c));
  for (const auto& m : j.at("merges")) {
    const Str l = utf8_decode(m.at(0).get<std::string>());
    const Str r = utf8_decode(m.at(1).get<std::string>());
    if (!available.count(l) || !available.count(r))
      throw std::invalid_argument("merge operands must be base symbols or earlier merge products");
    available.insert(l + r);
    t.merges.emplace_back(l, r);
  }

  const auto& vocab = j.at("vocab");
  const std::size_t expected = t.base_alphabet.size() + t.merges.size();
  if (vocab.size() != expected) throw std::invalid_argument("vocab size does not match alphabet plus merges");
  t.id_to_token.resize(expected);
  std::vector<bool> seen(expected, false);
  for (auto it = vocab.begin(); it != vocab.end(); ++it) {
    const Str tok = utf8_decode(it.key());
    const int id = it.value().get<int>();
    if (id < 0 || id >= static_cast<int>(expected) || seen[static_cast<std::size_t>(id)])
      throw std::invalid_argument("vocab ids must be dense in [0, vocab_size)");
    if (!available.count(tok)) throw std::invalid_argument("vocab token not derivable from alphabet and merges");
    seen[static_cast<std::size_t>(id)] = true;
    t.vocab.emplace(tok, id);
    t.id_to_token[static_cast<std::size_t>(id)] = tok;
  }
  return t;
}

bool VocabBijection::fully_maps(const TokenSeq& z) const {
  for (int id : z)
    if (!forward.count(id)) return false;
  return true;
}

TokenSeq VocabBijection::map_tokens(const TokenSeq& z) const {
  TokenSeq out;
  out.reserve(z.size());
  for (int id : z) {
    auto it = forward.find(id);
    if (it == forward.end()) throw std::invalid_argument("token id " + std::to_string(id) + " has no image");
    out.push_back(it->second);
  }
  return out;
}

VocabBijection propose_reversal_bijection(const BpeTokenizer& t_fwd, const BpeTokenizer& t_rev) {
  VocabBijection pi;
  for (int id = 0; id < t_fwd.vocab_size(); ++id) {
    const Str reversed = reverse_string(t_fwd.token_string(id));
    auto it = t_rev.vocab.find(reversed);
    if (it != t_rev.vocab.end()) {
      pi.forward.emplace(id, it->second);
      pi.inverse.emplace(it->second, id);
    }
  }
  pi.coverage = t_fwd.vocab_size() == 0
                    ? 1.0
                    : static_cast<double>(pi.forward.size()) / static_cast<double>(t_fwd.vocab_size());
  return pi;
}

StabilityReport stability_report(const BpeTokenizer& t_fwd, const BpeTokenizer& t_rev,
                                 const VocabBijection& pi, const Corpus& d, std::size_t max_examples) {
  StabilityReport r;
  r.coverage = pi.coverage;
  r.docs_checked = d.size();

  for (std::size_t i = 0; i < d.docs.size(); ++i) {
    const Str& doc = d.docs[i];
    TokenSeq fwd, rev;
    try {
      fwd = encode(t_fwd, doc);
      rev = encode(t_rev, reverse_string(doc));
    } catch (const std::exception& e) {
      throw std::runtime_error("document " + std::to_string(i) + ": " + e.what());
    }
    const TokenSeq reversed_fwd = reverse_tokens(fwd);
    const bool stable = pi.fully_maps(reversed_fwd) && pi.map_tokens(reversed_fwd) == rev;
    if (stable) {
      ++r.docs_stable;
    } else if (r.violating_examples.size() < max_examples) {
      r.violating_examples.push_back({i, doc, fwd, rev});
    }
  }
  r.seq_stable_fraction = r.docs_checked == 0 ? 1.0 : static_cast<double>(r.docs_stable) / static_cast<double>(r.docs_checked);

  if (t_fwd.merges.empty()) {
    r.merge_agreement = 1.0;  // vacuous for character-level tokenizers
  } else {
    std::set<std::pair<Str, Str>> rev_merges(t_rev.merges.begin(), t_rev.merges.end());
    std::size_t agree = 0;
    for (const auto& [l, right] : t_fwd.merges)
      if (rev_merges.count({reverse_string(right), reverse_string(l)})) ++agree;
    r.merge_agreement = static_cast<double>(agree) / static_cast<double>(t_fwd.merges.size());
  }
  return r;
}

nlohmann::ordered_json stability_to_json(const StabilityReport& r) {
  nlohmann::ordered_json j;
  j["coverage"] = r.coverage;
  j["seq_stable_fraction"] = r.seq_stable_fraction;
  j["merge_agreement"] = r.merge_agreement;
  j["docs_checked"] = r.docs_checked;
  j["docs_stable"] = r.docs_stable;
  j["violating_examples"] = nlohmann::ordered_json::array();
  for (const auto& v : r.violating_examples) {
    j["violating_examples"].push_back({{"doc_index", v.doc_index},
                                       {"doc", utf8_encode(v.doc)},
                                       {"forward_tokens", v.forward_tokens},
                                       {"reverse_tokens", v.reverse_tokens}});
  }
  return j;
}

std::string stability_table(const StabilityReport& r) {
  std::ostringstream out;
  out << "tokenizer stability under reversal\n";
  out << "  coverage            " << r.coverage << "\n";
  out << "  seq_stable_fraction " << r.seq_stable_fraction << "\n";
  out << "  merge_agreement     " << r.merge_agreement << "\n";
  out << "  docs stable/checked " << r.docs_stable << "/" << r.docs_checked << "\n";
  if (!r.violating_examples.empty()) {
    out << "  violations (first " << r.violating_examples.size() << "):\n";
    for (const auto& v : r.violating_examples) {
      out << "    doc " << v.doc_index << " \"" << utf8_encode(v.doc) << "\" fwd[";
      for (std::size_t k = 0; k < v.forward_tokens.size(); ++k)
        out << (k ? "," : "") << v.forward_tokens[k];
      out << "] rev[";
      for (std::size_t k = 0; k < v.reverse_tokens.size(); ++k)
        out << (k ? "," : "") << v.reverse_tokens[k];
      out << "]\n";
    }
  }
  return out.str();
}

}  // namespace revlab
