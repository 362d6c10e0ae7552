#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>

#include "gradet/bpe.hpp"
#include "gradet/textcore.hpp"

namespace gradet {

enum class TokenizerKind { Grapheme, Bpe, Char };

std::string_view to_string(TokenizerKind kind);
/// Throws UsageError for names other than grapheme, bpe, char.
TokenizerKind parse_tokenizer_kind(std::string_view name);

/// Uniform front for the grapheme, character and BPE tokenizers.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual TokenizerKind kind() const = 0;
  virtual std::size_t size() const = 0;
  virtual text::TokenSequence encode(std::string_view text, bool frame) const = 0;
  virtual std::string decode(const text::TokenSequence& tokens) const = 0;
  /// UTF-8 surface of a single id; specials render as their literal.
  virtual std::string surface(TokenId id) const = 0;
  /// Text of the vocabulary or model file.
  virtual std::string serialize() const = 0;
};

std::unique_ptr<Tokenizer> make_grapheme_tokenizer(text::GraphemeVocab vocab);
std::unique_ptr<Tokenizer> make_char_tokenizer(text::GraphemeVocab vocab);
std::unique_ptr<Tokenizer> make_bpe_tokenizer(bpe::BpeModel model);

/// Rebuilds a tokenizer from `serialize()` output.
std::unique_ptr<Tokenizer> deserialize_tokenizer(TokenizerKind kind, const std::string& data);
std::unique_ptr<Tokenizer> load_tokenizer(TokenizerKind kind, const std::string& path);

}  // namespace gradet
