#include "gradet/textcore.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

#include "gradet/unicode.hpp"

namespace gradet::text {

CharClass classify(char32_t cp) {
  if ((cp >= 0x0995 && cp <= 0x09B9) || (cp >= 0x09DC && cp <= 0x09DF) || cp == 0x09CE ||
      cp == 0x09F0 || cp == 0x09F1) {
    return CharClass::Consonant;
  }
  if (cp == 0x09BC) return CharClass::Nukta;
  if (cp == kVirama) return CharClass::Virama;
  if (cp == kZwj || cp == kZwnj) return CharClass::Joiner;
  if ((cp >= 0x09BE && cp <= 0x09C4) || cp == 0x09C7 || cp == 0x09C8 || cp == 0x09CB || cp == 0x09CC ||
      cp == 0x09D7) {
    return CharClass::VowelSign;
  }
  if (cp >= 0x0981 && cp <= 0x0983) return CharClass::Modifier;
  if (cp >= 0x0985 && cp <= 0x0994) return CharClass::IndependentVowel;
  if (cp >= 0x09E6 && cp <= 0x09EF) return CharClass::Digit;
  return CharClass::Other;
}

std::string GraphemeCluster::utf8() const { return unicode::to_utf8(codepoints); }

namespace {

// Length of the cluster starting at `pos`.
std::size_t cluster_length(std::u32string_view text, std::size_t pos) {
  const std::size_t n = text.size();
  auto is = [&](std::size_t i, CharClass c) { return i < n && classify(text[i]) == c; };

  std::size_t i = pos;
  switch (classify(text[i])) {
    case CharClass::Consonant: {
      ++i;
      if (is(i, CharClass::Nukta)) ++i;
      while (is(i, CharClass::Virama)) {
        std::size_t j = i + 1;
        if (is(j, CharClass::Joiner)) ++j;
        if (!is(j, CharClass::Consonant)) {
          // Final hasanta ends the cluster, keeping a directly following joiner.
          return j - pos;
        }
        i = j + 1;
        if (is(i, CharClass::Nukta)) ++i;
      }
      if (is(i, CharClass::VowelSign)) ++i;
      while (is(i, CharClass::Modifier)) ++i;
      return i - pos;
    }
    case CharClass::IndependentVowel:
      ++i;
      while (is(i, CharClass::Modifier)) ++i;
      return i - pos;
    default:
      return 1;
  }
}

}  // namespace

std::vector<GraphemeCluster> segment(std::u32string_view text) {
  std::vector<GraphemeCluster> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t len = cluster_length(text, pos);
    out.push_back(GraphemeCluster{std::u32string(text.substr(pos, len))});
    pos += len;
  }
  return out;
}

std::vector<GraphemeCluster> segment(std::string_view utf8) { return segment(unicode::to_u32(utf8)); }

std::vector<GraphemeCluster> segment_characters(std::u32string_view text) {
  std::vector<GraphemeCluster> out;
  out.reserve(text.size());
  for (char32_t cp : text) out.push_back(GraphemeCluster{std::u32string(1, cp)});
  return out;
}

std::vector<GraphemeCluster> segment_characters(std::string_view utf8) {
  return segment_characters(unicode::to_u32(utf8));
}

std::vector<GraphemeCluster> segment_as(std::u32string_view text, Segmentation mode) {
  return mode == Segmentation::Grapheme ? segment(text) : segment_characters(text);
}

std::string_view special_literal(TokenId id) {
  switch (id) {
    case kPad: return "<pad>";
    case kUnk: return "<unk>";
    case kBos: return "<bos>";
    case kEos: return "<eos>";
    default: throw std::out_of_range("not a special token id: " + std::to_string(id));
  }
}

Trie::Trie() : nodes_(1) {}

void Trie::insert(std::u32string_view key, TokenId id) {
  std::int32_t node = 0;
  for (char32_t cp : key) {
    auto it = nodes_[node].next.find(cp);
    if (it == nodes_[node].next.end()) {
      nodes_.emplace_back();
      const auto child = static_cast<std::int32_t>(nodes_.size() - 1);
      nodes_[node].next.emplace(cp, child);
      node = child;
    } else {
      node = it->second;
    }
  }
  nodes_[node].id = id;
}

std::optional<TokenId> Trie::find(std::u32string_view key) const {
  std::int32_t node = 0;
  for (char32_t cp : key) {
    auto it = nodes_[node].next.find(cp);
    if (it == nodes_[node].next.end()) return std::nullopt;
    node = it->second;
  }
  if (nodes_[node].id < 0) return std::nullopt;
  return nodes_[node].id;
}

std::optional<std::pair<TokenId, std::size_t>> Trie::longest_match(std::span<const GraphemeCluster> clusters,
                                                                   std::size_t begin) const {
  std::optional<std::pair<TokenId, std::size_t>> best;
  std::int32_t node = 0;
  for (std::size_t c = begin; c < clusters.size(); ++c) {
    for (char32_t cp : clusters[c].codepoints) {
      auto it = nodes_[node].next.find(cp);
      if (it == nodes_[node].next.end()) return best;
      node = it->second;
    }
    // Only cluster boundaries are admissible match ends.
    if (nodes_[node].id >= 0) best = std::make_pair(nodes_[node].id, c - begin + 1);
  }
  return best;
}

GraphemeVocab::GraphemeVocab() {
  for (TokenId id = 0; id < kNumSpecial; ++id) {
    tokens_.push_back(unicode::to_u32(special_literal(id)));
  }
}

GraphemeVocab GraphemeVocab::from_graphemes(std::span<const std::u32string> graphemes) {
  GraphemeVocab vocab;
  for (const auto& g : graphemes) {
    if (g.empty()) throw FormatError("empty vocabulary entry");
    if (vocab.trie_.find(g)) throw FormatError("duplicate vocabulary entry: " + unicode::to_utf8(g));
    const auto id = static_cast<TokenId>(vocab.tokens_.size());
    vocab.tokens_.push_back(g);
    vocab.trie_.insert(g, id);
  }
  return vocab;
}

const std::u32string& GraphemeVocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

GraphemeVocab build_vocab(std::span<const std::string> corpus, std::size_t min_count, Segmentation mode) {
  if (min_count < 1) throw std::invalid_argument("build_vocab: min_count must be >= 1");
  std::map<std::u32string, std::size_t> counts;
  for (const auto& line : corpus) {
    for (auto& cluster : segment_as(unicode::to_u32(line), mode)) {
      if (cluster.codepoints.find_first_of(U"\r\n") != std::u32string::npos) continue;
      ++counts[std::move(cluster.codepoints)];
    }
  }
  std::vector<std::pair<std::u32string, std::size_t>> kept;
  for (auto& [g, n] : counts) {
    if (n >= min_count) kept.emplace_back(g, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::u32string> graphemes;
  graphemes.reserve(kept.size());
  for (auto& [g, n] : kept) graphemes.push_back(std::move(g));
  return GraphemeVocab::from_graphemes(graphemes);
}

TokenSequence encode(std::string_view text, const GraphemeVocab& vocab, bool frame, Segmentation mode) {
  const auto clusters = segment_as(unicode::to_u32(text), mode);
  TokenSequence seq;
  seq.framed = frame;
  seq.ids.reserve(clusters.size() + 2);
  if (frame) seq.ids.push_back(kBos);
  std::size_t pos = 0;
  while (pos < clusters.size()) {
    if (auto match = vocab.trie().longest_match(clusters, pos)) {
      seq.ids.push_back(match->first);
      pos += match->second;
    } else {
      seq.ids.push_back(kUnk);
      ++pos;
    }
  }
  if (frame) seq.ids.push_back(kEos);
  return seq;
}

std::string decode(const TokenSequence& tokens, const GraphemeVocab& vocab) {
  std::u32string out;
  for (TokenId id : tokens.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      throw std::out_of_range("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                              std::to_string(vocab.size()));
    }
    if (id == kPad || id == kBos || id == kEos) continue;
    if (id == kUnk) {
      out.push_back(kReplacement);
      continue;
    }
    out += vocab.token(id);
  }
  return unicode::to_utf8(out);
}

void write_vocab(std::ostream& out, const GraphemeVocab& vocab) {
  for (TokenId id = 0; id < static_cast<TokenId>(vocab.size()); ++id) {
    out << unicode::to_utf8(vocab.token(id)) << '\n';
  }
}

GraphemeVocab read_vocab(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::u32string> graphemes;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no <= static_cast<std::size_t>(kNumSpecial)) {
      if (line != special_literal(static_cast<TokenId>(line_no - 1))) {
        throw FormatError("vocab line " + std::to_string(line_no) + ": expected " +
                          std::string(special_literal(static_cast<TokenId>(line_no - 1))));
      }
      continue;
    }
    if (line.empty()) throw FormatError("vocab line " + std::to_string(line_no) + ": empty entry");
    auto g = unicode::to_u32(line);
    for (TokenId id = 0; id < kNumSpecial; ++id) {
      if (line == special_literal(id)) {
        throw FormatError("vocab line " + std::to_string(line_no) + ": duplicate of " + line);
      }
    }
    graphemes.push_back(std::move(g));
  }
  if (line_no < static_cast<std::size_t>(kNumSpecial)) throw FormatError("vocab file is missing special tokens");
  try {
    return GraphemeVocab::from_graphemes(graphemes);
  } catch (const FormatError& e) {
    throw FormatError(std::string("vocab: ") + e.what());
  }
}

void save_vocab(const std::string& path, const GraphemeVocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_vocab(out, vocab);
}

GraphemeVocab load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open vocab file " + path);
  return read_vocab(in);
}

}  // namespace gradet::text
