#include <random>
#include <set>
#include <sstream>

#include "doctest.h"

#include "gradet/bpe.hpp"
#include "gradet/synthgen.hpp"
#include "gradet/textcore.hpp"
#include "gradet/tokenizer.hpp"
#include "gradet/unicode.hpp"
#include "oracles.hpp"

using namespace gradet;
using namespace gradet::bpe;

TEST_CASE("bpe: merges follow pair frequency, ties by pair order") {
  // pairs: ab x3, bc x2, ca x1 -> ab first; then (ab,c) x2 ; then nothing above 1
  const std::vector<std::string> corpus = {"abc abc ab ca"};
  const auto model = bpe_train(corpus, 100);
  REQUIRE(model.merges().size() == 2);
  CHECK(model.merges()[0] == BpeModel::Merge{U"a", U"b"});
  CHECK(model.merges()[1] == BpeModel::Merge{U"ab", U"c"});
  // specials, base alphabet (space a b c), products
  CHECK(model.size() == 4 + 4 + 2);
  CHECK(model.token(8) == U"ab");
  CHECK(model.token(9) == U"abc");

  // Equal counts: "ba" and "ab" both twice; lexicographically smaller pair wins.
  const std::vector<std::string> tie = {"ab ba ab ba"};
  const auto tied = bpe_train(tie, 8);
  REQUIRE(tied.merges().size() == 1);
  CHECK(tied.merges()[0] == BpeModel::Merge{U"a", U"b"});
}

TEST_CASE("bpe: target budget and no-merge case") {
  const std::vector<std::string> corpus = {"aaaa bbbb aaaa"};
  const auto small = bpe_train(corpus, 3);
  CHECK(small.merges().empty());
  CHECK(small.size() == 4 + 3);
  const auto one = bpe_train(corpus, 8);
  CHECK(one.size() == 8);
  CHECK(one.merges().size() == 1);
}

TEST_CASE("bpe: encoding applies merges by rank") {
  const std::vector<std::string> corpus = {"abc abc ab ca"};
  const auto model = bpe_train(corpus, 100);
  CHECK(apply_merges(U"abcab", model) == std::vector<std::u32string>{U"abc", U"ab"});
  CHECK(apply_merges(U"cab", model) == std::vector<std::u32string>{U"c", U"ab"});
  const auto seq = bpe_encode("ca abc", model, true);
  CHECK(seq.ids.front() == text::kBos);
  CHECK(seq.ids.back() == text::kEos);
  CHECK(bpe_decode(seq, model) == "ca abc");
  // 'z' is outside the base alphabet
  const auto unk = bpe_encode("abzab", model, false);
  CHECK(unk.ids == std::vector<TokenId>{*model.id_of(U"ab"), text::kUnk, *model.id_of(U"ab")});
}

TEST_CASE("bpe: model file roundtrip including whitespace symbols") {
  const std::vector<std::string> corpus = {"বাংলা বাংলা ক্ষমা", "ক্ষমা\tবা"};
  const auto model = bpe_train(corpus, 40);
  std::stringstream buffer;
  write_model(buffer, model);
  const auto back = read_model(buffer);
  REQUIRE(back.size() == model.size());
  for (TokenId id = 0; id < static_cast<TokenId>(model.size()); ++id) CHECK(back.token(id) == model.token(id));

  std::istringstream bad("bpe v2 0 0\n");
  CHECK_THROWS_AS(read_model(bad), FormatError);
  std::istringstream unknown("bpe v1 1 1\na\na\tb\n");
  CHECK_THROWS_AS(read_model(unknown), FormatError);
  std::istringstream truncated("bpe v1 3 0\na\n");
  CHECK_THROWS_AS(read_model(truncated), FormatError);
}

TEST_CASE("bpe: roundtrip on fuzzed Bengali text") {
  std::mt19937_64 rng(99);
  std::vector<std::string> corpus;
  for (int i = 0; i < 300; ++i) corpus.push_back(unicode::nfc(unicode::to_utf8(oracle::fuzz_syllables(rng))));
  const auto model = bpe_train(corpus, 200);
  for (const auto& line : corpus) {
    const auto seq = bpe_encode(line, model, true);
    REQUIRE(bpe_decode(seq, model) == line);
  }
}

TEST_CASE("tokenizer: kinds by name") {
  CHECK(parse_tokenizer_kind("grapheme") == TokenizerKind::Grapheme);
  CHECK(parse_tokenizer_kind("bpe") == TokenizerKind::Bpe);
  CHECK(parse_tokenizer_kind("char") == TokenizerKind::Char);
  CHECK_THROWS_AS(parse_tokenizer_kind("wordpiece"), UsageError);
}

TEST_CASE("tokenizer: serialize/deserialize preserves behaviour") {
  const std::vector<std::string> corpus = {"বাংলা ক্ষমা", "স্ত্রী"};
  std::vector<std::unique_ptr<Tokenizer>> all;
  all.push_back(make_grapheme_tokenizer(text::build_vocab(corpus, 1)));
  all.push_back(make_char_tokenizer(text::build_vocab(corpus, 1, text::Segmentation::Character)));
  all.push_back(make_bpe_tokenizer(bpe_train(corpus, 30)));
  for (const auto& tok : all) {
    const auto copy = deserialize_tokenizer(tok->kind(), tok->serialize());
    CHECK(copy->size() == tok->size());
    const auto seq = tok->encode("স্ত্রী বাংলা", true);
    CHECK(copy->encode("স্ত্রী বাংলা", true) == seq);
    CHECK(tok->decode(seq) == "স্ত্রী বাংলা");
    CHECK(tok->surface(text::kBos) == "<bos>");
  }
  // grapheme < char on conjunct input
  CHECK(all[0]->encode("স্ত্রী", false).ids.size() == 1);
  CHECK(all[1]->encode("স্ত্রী", false).ids.size() == 6);
}

TEST_CASE("bpe vs grapheme: cluster-boundary alignment at equal vocabulary size") {
  // Pseudo-words repeat their clusters often enough for BPE to reach the same size.
  const auto corpus = synth::pseudo_words(2000, 9);
  const auto vocab = text::build_vocab(corpus, 1);
  const auto grapheme = make_grapheme_tokenizer(vocab);
  const auto bpe = make_bpe_tokenizer(bpe_train(corpus, vocab.size()));
  REQUIRE(bpe->size() == grapheme->size());

  // Token boundaries as codepoint offsets; a token is aligned when its span is one cluster.
  auto misaligned = [](const Tokenizer& tok, const std::string& s) {
    std::set<std::size_t> cuts = {0};
    std::size_t pos = 0;
    for (const auto& c : oracle::cluster_lengths(unicode::to_u32(s))) cuts.insert(pos += c);
    std::size_t bad = 0, at = 0;
    for (const TokenId id : tok.encode(s, false).ids) {
      const std::size_t len = unicode::to_u32(tok.surface(id)).size();
      const auto next = cuts.upper_bound(at);
      if (!cuts.count(at) || next == cuts.end() || *next != at + len) ++bad;
      at += len;
    }
    return bad;
  };
  std::size_t grapheme_bad = 0, bpe_bad = 0;
  for (const auto& s : corpus) {
    grapheme_bad += misaligned(*grapheme, s);
    bpe_bad += misaligned(*bpe, s);
  }
  CHECK(grapheme_bad == 0);
  CHECK(bpe_bad > 0);
}
