#include "gradet/tokenizer.hpp"

#include <fstream>
#include <sstream>

#include "gradet/unicode.hpp"

namespace gradet {

std::string_view to_string(TokenizerKind kind) {
  switch (kind) {
    case TokenizerKind::Grapheme: return "grapheme";
    case TokenizerKind::Bpe: return "bpe";
    case TokenizerKind::Char: return "char";
  }
  return "?";
}

TokenizerKind parse_tokenizer_kind(std::string_view name) {
  if (name == "grapheme") return TokenizerKind::Grapheme;
  if (name == "bpe") return TokenizerKind::Bpe;
  if (name == "char") return TokenizerKind::Char;
  throw UsageError("unknown tokenizer '" + std::string(name) + "' (expected grapheme, bpe or char)");
}

namespace {

class VocabTokenizer final : public Tokenizer {
 public:
  VocabTokenizer(text::GraphemeVocab vocab, text::Segmentation mode) : vocab_(std::move(vocab)), mode_(mode) {}

  TokenizerKind kind() const override {
    return mode_ == text::Segmentation::Grapheme ? TokenizerKind::Grapheme : TokenizerKind::Char;
  }
  std::size_t size() const override { return vocab_.size(); }
  text::TokenSequence encode(std::string_view s, bool frame) const override {
    return text::encode(s, vocab_, frame, mode_);
  }
  std::string decode(const text::TokenSequence& tokens) const override { return text::decode(tokens, vocab_); }
  std::string surface(TokenId id) const override { return unicode::to_utf8(vocab_.token(id)); }
  std::string serialize() const override {
    std::ostringstream out;
    text::write_vocab(out, vocab_);
    return out.str();
  }

 private:
  text::GraphemeVocab vocab_;
  text::Segmentation mode_;
};

class BpeTokenizer final : public Tokenizer {
 public:
  explicit BpeTokenizer(bpe::BpeModel model) : model_(std::move(model)) {}

  TokenizerKind kind() const override { return TokenizerKind::Bpe; }
  std::size_t size() const override { return model_.size(); }
  text::TokenSequence encode(std::string_view s, bool frame) const override {
    return bpe::bpe_encode(s, model_, frame);
  }
  std::string decode(const text::TokenSequence& tokens) const override { return bpe::bpe_decode(tokens, model_); }
  std::string surface(TokenId id) const override { return unicode::to_utf8(model_.token(id)); }
  std::string serialize() const override {
    std::ostringstream out;
    bpe::write_model(out, model_);
    return out.str();
  }

 private:
  bpe::BpeModel model_;
};

}  // namespace

std::unique_ptr<Tokenizer> make_grapheme_tokenizer(text::GraphemeVocab vocab) {
  return std::make_unique<VocabTokenizer>(std::move(vocab), text::Segmentation::Grapheme);
}

std::unique_ptr<Tokenizer> make_char_tokenizer(text::GraphemeVocab vocab) {
  return std::make_unique<VocabTokenizer>(std::move(vocab), text::Segmentation::Character);
}

std::unique_ptr<Tokenizer> make_bpe_tokenizer(bpe::BpeModel model) {
  return std::make_unique<BpeTokenizer>(std::move(model));
}

std::unique_ptr<Tokenizer> deserialize_tokenizer(TokenizerKind kind, const std::string& data) {
  std::istringstream in(data);
  switch (kind) {
    case TokenizerKind::Grapheme: return make_grapheme_tokenizer(text::read_vocab(in));
    case TokenizerKind::Char: return make_char_tokenizer(text::read_vocab(in));
    case TokenizerKind::Bpe: return make_bpe_tokenizer(bpe::read_model(in));
  }
  throw UsageError("unknown tokenizer kind");
}

std::unique_ptr<Tokenizer> load_tokenizer(TokenizerKind kind, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open tokenizer file " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_tokenizer(kind, buffer.str());
}

}  // namespace gradet
