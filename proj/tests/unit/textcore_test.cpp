#include <random>
#include <sstream>

#include "doctest.h"

#include "gradet/textcore.hpp"
#include "gradet/unicode.hpp"
#include "oracles.hpp"
#include "segmentation_cases.hpp"

using namespace gradet;
using namespace gradet::text;

namespace {

std::vector<std::u32string> pieces(std::u32string_view s) {
  std::vector<std::u32string> out;
  for (auto& c : segment(s)) out.push_back(c.codepoints);
  return out;
}

std::vector<std::string> corpus(std::initializer_list<const char*> lines) { return {lines.begin(), lines.end()}; }

}  // namespace

TEST_CASE("unicode: strict utf-8 decoding") {
  CHECK(unicode::to_u32("a\xE0\xA6\x95") == U"aক");
  CHECK_THROWS_AS(unicode::to_u32("\xE0\xA6"), FormatError);      // truncated
  CHECK_THROWS_AS(unicode::to_u32("\xC0\x80"), FormatError);      // overlong
  CHECK_THROWS_AS(unicode::to_u32("\xED\xA0\x80"), FormatError);  // surrogate
  CHECK_FALSE(unicode::is_valid_utf8("\xFF"));
  CHECK(unicode::to_utf8(unicode::to_u32("বাংলা")) == "বাংলা");
}

TEST_CASE("unicode: NFC composes split vowel signs") {
  // e-kar + aa-kar composes to o-kar.
  CHECK(unicode::nfc("কো") == "কো");
  CHECK(unicode::nfc("abc") == "abc");
}

TEST_CASE("unicode: whitespace splitting") {
  const auto words = unicode::split_words(U"  ক খ\tগ ঘ ");
  REQUIRE(words.size() == 4);
  CHECK(words[3] == U"ঘ");
}

TEST_CASE("segment: hand-built cases") {
  for (const auto& c : cases::segmentation()) {
    CAPTURE(c.label);
    CHECK(pieces(c.input) == c.expected);
    CHECK(oracle::clusters(c.input) == c.expected);
  }
}

TEST_CASE("segment: agrees with the regex grammar on fuzzed strings") {
  std::mt19937_64 rng(1234);
  for (int i = 0; i < 2000; ++i) {
    const auto s = oracle::fuzz_bengali_block(rng);
    const auto got = pieces(s);
    REQUIRE(got == oracle::clusters(s));
    std::u32string joined;
    for (const auto& p : got) joined += p;
    REQUIRE(joined == s);
  }
}

TEST_CASE("segment: character mode is one codepoint per cluster") {
  const auto chars = segment_characters(std::u32string_view(U"ক্ষা"));
  CHECK(chars.size() == 4);
  CHECK(segment_as(U"ক্ষা", Segmentation::Grapheme).size() == 1);
}

TEST_CASE("trie: longest match stops at cluster boundaries") {
  const std::u32string entries[] = {U"ক", U"ক্ষ", U"কা", U"ক্ষা"};
  const auto vocab = GraphemeVocab::from_graphemes(entries);
  // "ক্ষা" is a single cluster, so only the whole cluster can match.
  const auto clusters = segment(std::u32string_view(U"ক্ষাক"));
  auto m = vocab.trie().longest_match(clusters, 0);
  REQUIRE(m);
  CHECK(vocab.token(m->first) == U"ক্ষা");
  CHECK(m->second == 1);

  // A multi-cluster entry wins over its single-cluster prefix.
  const std::u32string two[] = {U"ক", U"কখ"};
  const auto v2 = GraphemeVocab::from_graphemes(two);
  const auto c2 = segment(std::u32string_view(U"কখগ"));
  m = v2.trie().longest_match(c2, 0);
  REQUIRE(m);
  CHECK(m->second == 2);
  CHECK_FALSE(v2.trie().longest_match(c2, 2));
}

TEST_CASE("vocab: frequency order with codepoint tie-break") {
  const auto vocab = build_vocab(corpus({"কা কা খ", "গ খ"}), 1);
  // counts: কা 2, খ 2, ' ' 3, গ 1
  REQUIRE(vocab.size() == kNumSpecial + 4);
  CHECK(vocab.token(4) == U" ");
  CHECK(vocab.token(5) == U"কা");
  CHECK(vocab.token(6) == U"খ");
  CHECK(vocab.token(7) == U"গ");
  CHECK(build_vocab(corpus({"কা কা খ", "গ খ"}), 2).size() == kNumSpecial + 3);
  CHECK_THROWS_AS(build_vocab(corpus({"ক"}), 0), std::invalid_argument);
}

TEST_CASE("vocab: from_graphemes rejects duplicates and empty entries") {
  const std::u32string dup[] = {U"ক", U"ক"};
  CHECK_THROWS_AS(GraphemeVocab::from_graphemes(dup), FormatError);
  const std::u32string empty[] = {U""};
  CHECK_THROWS_AS(GraphemeVocab::from_graphemes(empty), FormatError);
}

TEST_CASE("encode/decode") {
  const auto vocab = build_vocab(corpus({"ক্ষমা বাংলা"}), 1);
  SUBCASE("roundtrip with and without framing") {
    for (bool frame : {false, true}) {
      const auto seq = encode("বাংলা ক্ষমা", vocab, frame);
      CHECK(seq.ids.size() == (frame ? 7u : 5u));
      if (frame) {
        CHECK(seq.ids.front() == kBos);
        CHECK(seq.ids.back() == kEos);
      }
      CHECK(decode(seq, vocab) == "বাংলা ক্ষমা");
    }
  }
  SUBCASE("unknown cluster becomes one UNK") {
    const auto seq = encode("বাংক্ষোলা", vocab, false);
    // ক্ষো is not in the vocab
    CHECK(seq.ids == std::vector<TokenId>{*vocab.id_of(U"বাং"), kUnk, *vocab.id_of(U"লা")});
    CHECK(decode(seq, vocab) == "বাং�লা");
  }
  SUBCASE("empty input") {
    CHECK(encode("", vocab, false).ids.empty());
    CHECK(encode("", vocab, true).ids == std::vector<TokenId>{kBos, kEos});
  }
  SUBCASE("out-of-range id") {
    CHECK_THROWS_AS(decode(TokenSequence{{static_cast<TokenId>(vocab.size())}, false}, vocab), std::out_of_range);
    CHECK_THROWS_AS(decode(TokenSequence{{-1}, false}, vocab), std::out_of_range);
  }
  SUBCASE("grapheme tokens are fewer than codepoints for conjuncts") {
    const auto seq = encode("ক্ষমা", vocab, false);
    CHECK(seq.ids.size() < unicode::to_u32("ক্ষমা").size());
    const auto chars = build_vocab(corpus({"ক্ষমা"}), 1, Segmentation::Character);
    CHECK(encode("ক্ষমা", chars, false, Segmentation::Character).ids.size() == 5);
  }
}

TEST_CASE("vocab file: roundtrip and validation") {
  const auto vocab = build_vocab(corpus({"বাংলা ক্ষমা", "র্‍য"}), 1);
  std::stringstream buffer;
  write_vocab(buffer, vocab);
  const auto back = read_vocab(buffer);
  REQUIRE(back.size() == vocab.size());
  for (TokenId id = 0; id < static_cast<TokenId>(vocab.size()); ++id) CHECK(back.token(id) == vocab.token(id));

  std::istringstream missing("<pad>\n<unk>\n");
  CHECK_THROWS_AS(read_vocab(missing), FormatError);
  std::istringstream wrong("<pad>\n<bos>\n<unk>\n<eos>\nক\n");
  CHECK_THROWS_AS(read_vocab(wrong), FormatError);
  std::istringstream dup("<pad>\n<unk>\n<bos>\n<eos>\nক\nক\n");
  CHECK_THROWS_AS(read_vocab(dup), FormatError);
  std::istringstream special("<pad>\n<unk>\n<bos>\n<eos>\n<unk>\n");
  CHECK_THROWS_AS(read_vocab(special), FormatError);
  std::istringstream empty_line("<pad>\n<unk>\n<bos>\n<eos>\n\n");
  CHECK_THROWS_AS(read_vocab(empty_line), FormatError);
}
