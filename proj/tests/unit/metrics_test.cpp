#include <random>

#include "doctest.h"

#include "gradet/metrics.hpp"
#include "oracles.hpp"

using namespace gradet::metrics;

TEST_CASE("edit_counts: worked examples") {
  CHECK(edit_counts(std::string("abcd"), std::string("abcd")) == EditCounts{0, 0, 0, 4});
  const auto sub = edit_counts(std::string("abcd"), std::string("abxd"));
  CHECK(sub == EditCounts{1, 0, 0, 4});
  CHECK(*sub.rate() == doctest::Approx(0.25));
  const auto del = edit_counts(std::string("ab"), std::string(""));
  CHECK(del == EditCounts{0, 2, 0, 2});
  CHECK(*del.rate() == 1.0);
  const auto ins = edit_counts(std::string(""), std::string("xyz"));
  CHECK(ins == EditCounts{0, 0, 3, 0});
  CHECK_FALSE(ins.rate().has_value());
  CHECK(*edit_counts(std::string(""), std::string("")).rate() == 0.0);
}

TEST_CASE("edit_counts: backtrace prefers substitution, then insertion, then deletion") {
  // "ab" -> "ba": two substitutions rather than one insertion plus one deletion.
  CHECK(edit_counts(std::string("ab"), std::string("ba")) == EditCounts{2, 0, 0, 2});
  // "a" vs "b" with one extra: S then I.
  CHECK(edit_counts(std::string("a"), std::string("bc")) == EditCounts{1, 0, 1, 1});
}

TEST_CASE("cer/wer on strings") {
  // ka + virama + ta vs ka: two deletions over three codepoints.
  const auto c = char_counts("ক্ত", "ক");
  CHECK(c == EditCounts{0, 2, 0, 3});
  CHECK(*cer("ক্ত", "ক") == doctest::Approx(2.0 / 3.0));
  CHECK(*wer("ab cd", "ab cd") == 0.0);
  CHECK(*wer("ab cd", "ab ce") == doctest::Approx(0.5));
  const auto w = word_counts("ab", "ab cd");
  CHECK(w.I == 1);
  CHECK(*w.rate() == 1.0);
  // Whitespace runs are a single separator.
  CHECK(*wer("ab  cd", "ab\tcd") == 0.0);
  // Both sides are NFC-normalized: decomposed o-kar equals the composed one.
  CHECK(*cer("কো", "কো") == 0.0);
  CHECK(grapheme_counts("ক্ষমা", "ক্ষমা") == EditCounts{0, 0, 0, 2});
}

TEST_CASE("edit_counts: exhaustive agreement with breadth-first search (length <= 4)") {
  // The acceptance binary runs the full length-6 enumeration.
  const oracle::EditGraph graph(3, 4);
  for (std::size_t r = 0; r < graph.size(); ++r) {
    const auto dist = graph.distances_from(r);
    for (std::size_t h = 0; h < graph.size(); ++h) {
      const auto& ref = graph.string_at(r);
      const auto& hyp = graph.string_at(h);
      const auto counts = edit_counts(ref, hyp);
      REQUIRE(static_cast<int>(counts.distance()) == dist[h]);
      REQUIRE(counts.N == ref.size());
      REQUIRE(hyp.size() + counts.D == ref.size() + counts.I);
    }
  }
}

TEST_CASE("edit_counts: symmetry and triangle inequality") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(0, 8), sym(0, 3);
  auto draw = [&] {
    std::vector<int> s(static_cast<std::size_t>(len(rng)));
    for (auto& x : s) x = sym(rng);
    return s;
  };
  for (int i = 0; i < 500; ++i) {
    const auto a = draw(), b = draw(), c = draw();
    const auto ab = edit_counts(a, b), ba = edit_counts(b, a);
    CHECK(ab.distance() == ba.distance());
    CHECK(edit_counts(a, c).distance() <= ab.distance() + edit_counts(b, c).distance());
    CHECK((ab.distance() == 0) == (a == b));
    CHECK(ab.S + ab.D <= ab.N);
  }
}

TEST_CASE("aggregate: micro-averaged totals") {
  const std::vector<Sample> samples = {{"a", "abcd", "abxd"}, {"b", "ab cd", "ab"}, {"c", "", ""}};
  const auto report = aggregate(std::span<const Sample>(samples));
  CHECK(report.char_totals.N == 4 + 5);
  CHECK(report.char_totals.distance() == 1 + 3);
  CHECK(*report.cer() == doctest::Approx(4.0 / 9.0));
  CHECK(*report.wer() == doctest::Approx((1.0 + 1.0) / (1.0 + 2.0)));
  const auto j = report.to_json();
  CHECK(j["n_samples"] == 3);
  CHECK(j["totals"]["char"]["N"] == 9);
  CHECK(j["per_sample"].size() == 3);
  CHECK(j.contains("grapheme_error_rate"));
}

TEST_CASE("aggregate: empty corpus has zero rates") {
  const auto report = aggregate(std::span<const Sample>());
  CHECK(*report.cer() == 0.0);
}
