#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace revlab {

// A string is a sequence of Unicode scalar values; one element per code
// point. Reversal, alphabets and tokenization all operate at this level
// (no grapheme clustering, no normalization).
using Str = std::u32string;

// Token ids; always dense non-negative ints below the owning vocab size.
using TokenSeq = std::vector<int>;

// Strict UTF-8 decoding. Rejects malformed bytes, overlong forms,
// surrogates and values above U+10FFFF. Throws std::invalid_argument.
Str utf8_decode(std::string_view bytes);
std::string utf8_encode(const Str& s);

Str reverse_string(const Str& s);
TokenSeq reverse_tokens(const TokenSeq& z);

// Finite multiset of documents. Stored in ingestion order, duplicates
// preserved; that order is the canonical iteration order everywhere.
struct Corpus {
  std::vector<Str> docs;

  bool empty() const { return docs.empty(); }
  std::size_t size() const { return docs.size(); }
  std::map<Str, std::size_t> multiplicities() const;

  bool operator==(const Corpus&) const = default;
};

Corpus reverse_corpus(const Corpus& d);

// One document per line; blank lines are empty documents and are kept.
// A trailing newline terminates the last document (it does not add an
// empty one). '\r' is an ordinary symbol.
Corpus parse_corpus(std::string_view text);
Corpus load_corpus(const std::string& path);
std::string read_file(const std::string& path);

}  // namespace revlab
