#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gradet/common.hpp"

namespace gradet::text {

// Bengali codepoint classes used by the cluster grammar.
enum class CharClass {
  Consonant,
  Nukta,
  Virama,
  Joiner,  // ZWJ / ZWNJ
  VowelSign,
  Modifier,  // candrabindu, anusvara, visarga
  IndependentVowel,
  Digit,
  Other,
};

CharClass classify(char32_t cp);

constexpr char32_t kVirama = U'\u09CD';
constexpr char32_t kZwnj = U'\u200C';
constexpr char32_t kZwj = U'\u200D';
constexpr char32_t kReplacement = U'\uFFFD';

/// Smallest visually distinct written unit: one or more codepoints.
struct GraphemeCluster {
  std::u32string codepoints;

  std::string utf8() const;
  std::size_t size() const { return codepoints.size(); }
  auto operator<=>(const GraphemeCluster&) const = default;
};

/// Splits text into grapheme clusters. The concatenation of the result is the input.
///
/// A cluster is one of
///   consonant [nukta] (virama [ZWJ|ZWNJ] consonant [nukta])* then either
///       a final virama [ZWJ|ZWNJ], or [vowel sign] modifier*
///   independent vowel modifier*
///   a single Bengali digit
///   any other single codepoint
std::vector<GraphemeCluster> segment(std::u32string_view text);
std::vector<GraphemeCluster> segment(std::string_view utf8);

/// One cluster per codepoint.
std::vector<GraphemeCluster> segment_characters(std::u32string_view text);
std::vector<GraphemeCluster> segment_characters(std::string_view utf8);

enum class Segmentation { Grapheme, Character };

std::vector<GraphemeCluster> segment_as(std::u32string_view text, Segmentation mode);

// Reserved ids. Every vocabulary starts with these four entries.
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kNumSpecial = 4;

std::string_view special_literal(TokenId id);

struct TokenSequence {
  std::vector<TokenId> ids;
  bool framed = false;

  bool operator==(const TokenSequence&) const = default;
};

/// Prefix tree over codepoints mapping vocabulary entries to ids.
class Trie {
 public:
  Trie();

  void insert(std::u32string_view key, TokenId id);

  /// Id stored exactly at `key`, if any.
  std::optional<TokenId> find(std::u32string_view key) const;

  /// Longest entry that is a concatenation of clusters[begin..k) for some k > begin.
  /// Returns the id and the number of clusters consumed.
  std::optional<std::pair<TokenId, std::size_t>> longest_match(std::span<const GraphemeCluster> clusters,
                                                               std::size_t begin) const;

 private:
  struct Node {
    std::unordered_map<char32_t, std::int32_t> next;
    TokenId id = -1;
  };
  std::vector<Node> nodes_;
};

/// Ordered token inventory: the four specials at ids 0..3, then grapheme strings.
class GraphemeVocab {
 public:
  GraphemeVocab();

  /// Throws FormatError on duplicate or empty entries.
  static GraphemeVocab from_graphemes(std::span<const std::u32string> graphemes);

  std::size_t size() const { return tokens_.size(); }
  std::size_t grapheme_count() const { return tokens_.size() - kNumSpecial; }

  std::optional<TokenId> id_of(std::u32string_view codepoints) const { return trie_.find(codepoints); }

  /// Surface codepoints of a grapheme id. Specials return their literal (`<pad>` ...).
  const std::u32string& token(TokenId id) const;

  std::span<const std::u32string> graphemes() const {
    return std::span<const std::u32string>(tokens_).subspan(kNumSpecial);
  }

  const Trie& trie() const { return trie_; }

 private:
  std::vector<std::u32string> tokens_;
  Trie trie_;
};

/// Vocabulary of every cluster seen at least `min_count` times, ordered by descending
/// frequency then codepoint order. Clusters containing CR or LF are skipped since the
/// vocabulary file is line-oriented.
GraphemeVocab build_vocab(std::span<const std::string> corpus, std::size_t min_count,
                          Segmentation mode = Segmentation::Grapheme);

/// Trie longest match over the segmented clusters; unmatched clusters become one UNK each.
TokenSequence encode(std::string_view text, const GraphemeVocab& vocab, bool frame,
                     Segmentation mode = Segmentation::Grapheme);

/// PAD/BOS/EOS are dropped, UNK renders as U+FFFD. Throws std::out_of_range for ids >= V.
std::string decode(const TokenSequence& tokens, const GraphemeVocab& vocab);

void write_vocab(std::ostream& out, const GraphemeVocab& vocab);
GraphemeVocab read_vocab(std::istream& in);

void save_vocab(const std::string& path, const GraphemeVocab& vocab);
GraphemeVocab load_vocab(const std::string& path);

}  // namespace gradet::text
