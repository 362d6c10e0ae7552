#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gradet/textcore.hpp"

namespace gradet::bpe {

/// Codepoint-level byte-pair-encoding model.
///
/// Ids: the four specials, then the base alphabet in codepoint order, then the product
/// of each merge in training order. A merge whose product already exists reuses its id.
class BpeModel {
 public:
  using Merge = std::pair<std::u32string, std::u32string>;

  BpeModel() = default;
  /// Throws FormatError if a merge operand is neither a base symbol nor an earlier product.
  BpeModel(std::vector<char32_t> base_alphabet, std::vector<Merge> merges);

  std::span<const char32_t> base_alphabet() const { return base_; }
  std::span<const Merge> merges() const { return merges_; }
  std::size_t size() const { return tokens_.size(); }

  const std::u32string& token(TokenId id) const;
  std::optional<TokenId> id_of(const std::u32string& symbol) const;

  /// Merge rank of (left, right), or -1.
  int rank(const std::u32string& left, const std::u32string& right) const;

 private:
  std::vector<char32_t> base_;
  std::vector<Merge> merges_;
  std::vector<std::u32string> tokens_;
  std::unordered_map<std::u32string, TokenId> ids_;
  std::unordered_map<std::u32string, int> ranks_;  // key: left + U'\0' + right
};

/// Repeatedly merges the most frequent adjacent pair within whitespace-delimited words
/// (ties by lexicographic pair order) until the vocabulary reaches `target_vocab` or no
/// pair occurs at least twice. Whitespace codepoints join the base alphabet as singletons.
BpeModel bpe_train(std::span<const std::string> corpus, std::size_t target_vocab);

/// Symbols of one word after applying merges in priority order.
std::vector<std::u32string> apply_merges(std::u32string_view word, const BpeModel& model);

text::TokenSequence bpe_encode(std::string_view text, const BpeModel& model, bool frame);
/// PAD/BOS/EOS dropped, UNK renders as U+FFFD. Throws std::out_of_range for ids >= V.
std::string bpe_decode(const text::TokenSequence& tokens, const BpeModel& model);

void write_model(std::ostream& out, const BpeModel& model);
BpeModel read_model(std::istream& in);

}  // namespace gradet::bpe
