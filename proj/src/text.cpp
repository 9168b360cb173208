#include "revlab/text.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "revlab/digest.hpp"

namespace revlab {

namespace {

[[noreturn]] void bad_utf8(std::size_t offset, const char* what) {
  throw std::invalid_argument("invalid UTF-8 at byte " + std::to_string(offset) + ": " + what);
}

}  // namespace

std::string fnv1a64_hex(std::string_view bytes) {
  static const char* digits = "0123456789abcdef";
  std::uint64_t h = fnv1a64(bytes);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

Str utf8_decode(std::string_view bytes) {
  Str out;
  out.reserve(bytes.size());
  std::size_t i = 0;
  while (i < bytes.size()) {
    const unsigned char b0 = static_cast<unsigned char>(bytes[i]);
    std::size_t len;
    char32_t cp;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xe0) == 0xc0) {
      len = 2;
      cp = b0 & 0x1f;
    } else if ((b0 & 0xf0) == 0xe0) {
      len = 3;
      cp = b0 & 0x0f;
    } else if ((b0 & 0xf8) == 0xf0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      bad_utf8(i, "invalid leading byte");
    }
    if (i + len > bytes.size()) bad_utf8(i, "truncated sequence");
    for (std::size_t k = 1; k < len; ++k) {
      const unsigned char b = static_cast<unsigned char>(bytes[i + k]);
      if ((b & 0xc0) != 0x80) bad_utf8(i + k, "invalid continuation byte");
      cp = (cp << 6) | (b & 0x3f);
    }
    static const char32_t min_for_len[5] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < min_for_len[len]) bad_utf8(i, "overlong encoding");
    if (cp >= 0xd800 && cp <= 0xdfff) bad_utf8(i, "surrogate code point");
    if (cp > 0x10ffff) bad_utf8(i, "code point out of range");
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string utf8_encode(const Str& s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : s) {
    if (cp >= 0xd800 && cp <= 0xdfff) throw std::invalid_argument("surrogate code point in string");
    if (cp > 0x10ffff) throw std::invalid_argument("code point out of range");
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
      out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
  }
  return out;
}

Str reverse_string(const Str& s) {
  return Str(s.rbegin(), s.rend());
}

TokenSeq reverse_tokens(const TokenSeq& z) {
  return TokenSeq(z.rbegin(), z.rend());
}

std::map<Str, std::size_t> Corpus::multiplicities() const {
  std::map<Str, std::size_t> out;
  for (const Str& d : docs) ++out[d];
  return out;
}

Corpus reverse_corpus(const Corpus& d) {
  Corpus out;
  out.docs.reserve(d.docs.size());
  for (const Str& s : d.docs) out.docs.push_back(reverse_string(s));
  return out;
}

Corpus parse_corpus(std::string_view text) {
  Corpus out;
  std::size_t start = 0;
  while (start <= text.size()) {
    if (start == text.size()) {
      break;  // trailing newline already consumed; no extra empty doc
    }
    std::size_t nl = text.find('\n', start);
    std::string_view line = (nl == std::string_view::npos) ? text.substr(start) : text.substr(start, nl - start);
    out.docs.push_back(utf8_decode(line));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Corpus load_corpus(const std::string& path) {
  return parse_corpus(read_file(path));
}

}  // namespace revlab
