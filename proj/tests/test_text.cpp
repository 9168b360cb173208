#include <doctest.h>

#include "helpers.hpp"
#include "revlab/text.hpp"

using namespace revlab;

TEST_CASE("string reversal fixed points and examples") {
  CHECK(reverse_string(utf8_decode("")) == utf8_decode(""));
  CHECK(reverse_string(utf8_decode("abc")) == utf8_decode("cba"));
  CHECK(reverse_string(utf8_decode("racecar")) == utf8_decode("racecar"));
  CHECK(utf8_encode(reverse_string(utf8_decode("aé🙂"))) == "🙂éa");
}

TEST_CASE("string reversal is an involution and anti-homomorphism") {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const Str x = testing::random_unicode_string(rng, 24);
    const Str y = testing::random_unicode_string(rng, 24);
    CHECK(reverse_string(reverse_string(x)) == x);
    CHECK(reverse_string(x + y) == reverse_string(y) + reverse_string(x));
    CHECK(reverse_string(x).size() == x.size());
  }
}

TEST_CASE("token reversal") {
  CHECK(reverse_tokens({}) == TokenSeq{});
  CHECK(reverse_tokens({3, 1, 2}) == TokenSeq{2, 1, 3});
  CHECK(reverse_tokens({7}) == TokenSeq{7});
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    TokenSeq z;
    for (int k = rng.below(20); k > 0; --k) z.push_back(rng.below(50));
    CHECK(reverse_tokens(reverse_tokens(z)) == z);
  }
}

TEST_CASE("corpus reversal keeps multiplicities") {
  const Corpus c = testing::corpus_from_utf8({"ab", "ab"});
  const Corpus r = reverse_corpus(c);
  CHECK(r == testing::corpus_from_utf8({"ba", "ba"}));
  CHECK(r.multiplicities().at(utf8_decode("ba")) == 2);

  CHECK(reverse_corpus(Corpus{}) == Corpus{});
  CHECK(reverse_corpus(testing::corpus_from_utf8({"qu", "it"})) == testing::corpus_from_utf8({"uq", "ti"}));
  CHECK(reverse_corpus(reverse_corpus(c)) == c);
}

TEST_CASE("utf8 round trip and strictness") {
  Rng rng(29);
  for (int i = 0; i < 500; ++i) {
    const Str s = testing::random_unicode_string(rng, 32);
    CHECK(utf8_decode(utf8_encode(s)) == s);
  }
  CHECK_THROWS_AS(utf8_decode("\xff"), std::invalid_argument);
  CHECK_THROWS_AS(utf8_decode("\xc3"), std::invalid_argument);           // truncated
  CHECK_THROWS_AS(utf8_decode("\xc0\xaf"), std::invalid_argument);       // overlong
  CHECK_THROWS_AS(utf8_decode("\xed\xa0\x80"), std::invalid_argument);   // surrogate
  CHECK_THROWS_AS(utf8_decode("\x80"), std::invalid_argument);           // stray continuation
}

TEST_CASE("corpus parsing: one doc per line, blanks preserved") {
  const Corpus c = parse_corpus("ab\n\ncd\n");
  REQUIRE(c.size() == 3);
  CHECK(c.docs[0] == utf8_decode("ab"));
  CHECK(c.docs[1] == utf8_decode(""));
  CHECK(c.docs[2] == utf8_decode("cd"));

  CHECK(parse_corpus("").size() == 0);
  CHECK(parse_corpus("\n").size() == 1);
  CHECK(parse_corpus("a\nb").size() == 2);
  CHECK(parse_corpus("a\nb\n").size() == 2);
}
