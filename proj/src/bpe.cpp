#include "gradet/bpe.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "gradet/unicode.hpp"

namespace gradet::bpe {

namespace {

std::u32string rank_key(const std::u32string& left, const std::u32string& right) {
  std::u32string key = left;
  key.push_back(U'\0');
  key += right;
  return key;
}

}  // namespace

BpeModel::BpeModel(std::vector<char32_t> base_alphabet, std::vector<Merge> merges)
    : base_(std::move(base_alphabet)), merges_(std::move(merges)) {
  for (TokenId id = 0; id < text::kNumSpecial; ++id) {
    tokens_.push_back(unicode::to_u32(text::special_literal(id)));
  }
  auto add = [&](const std::u32string& symbol) {
    if (ids_.count(symbol)) return;
    ids_.emplace(symbol, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(symbol);
  };
  for (char32_t cp : base_) {
    if (ids_.count(std::u32string(1, cp))) throw FormatError("bpe: duplicate base symbol");
    add(std::u32string(1, cp));
  }
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto& [left, right] = merges_[r];
    if (!ids_.count(left) || !ids_.count(right)) {
      throw FormatError("bpe: merge " + std::to_string(r) + " uses an unknown operand");
    }
    ranks_.emplace(rank_key(left, right), static_cast<int>(r));
    add(left + right);
  }
}

const std::u32string& BpeModel::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> BpeModel::id_of(const std::u32string& symbol) const {
  auto it = ids_.find(symbol);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int BpeModel::rank(const std::u32string& left, const std::u32string& right) const {
  auto it = ranks_.find(rank_key(left, right));
  return it == ranks_.end() ? -1 : it->second;
}

BpeModel bpe_train(std::span<const std::string> corpus, std::size_t target_vocab) {
  std::set<char32_t> alphabet;
  std::map<std::u32string, std::size_t> word_counts;
  for (const auto& line : corpus) {
    const auto cps = unicode::to_u32(line);
    for (char32_t cp : cps) {
      if (cp != U'\n' && cp != U'\r') alphabet.insert(cp);
    }
    for (auto& w : unicode::split_words(cps)) ++word_counts[std::move(w)];
  }

  struct Word {
    std::vector<std::u32string> symbols;
    std::size_t count;
  };
  std::vector<Word> words;
  for (const auto& [w, n] : word_counts) {
    Word word{{}, n};
    for (char32_t cp : w) word.symbols.emplace_back(1, cp);
    words.push_back(std::move(word));
  }

  std::vector<char32_t> base(alphabet.begin(), alphabet.end());
  std::set<std::u32string> known;
  for (char32_t cp : base) known.emplace(1, cp);
  std::vector<BpeModel::Merge> merges;

  while (text::kNumSpecial + known.size() < target_vocab) {
    std::map<BpeModel::Merge, std::size_t> pairs;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) pairs[{w.symbols[i], w.symbols[i + 1]}] += w.count;
    }
    // std::map iterates in lexicographic pair order, so the first maximum wins ties.
    const BpeModel::Merge* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [pair, n] : pairs) {
      if (n > best_count) {
        best = &pair;
        best_count = n;
      }
    }
    if (best == nullptr || best_count < 2) break;
    const BpeModel::Merge merge = *best;
    const std::u32string product = merge.first + merge.second;
    for (auto& w : words) {
      std::vector<std::u32string> merged;
      merged.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == merge.first && w.symbols[i + 1] == merge.second) {
          merged.push_back(product);
          ++i;
        } else {
          merged.push_back(std::move(w.symbols[i]));
        }
      }
      w.symbols = std::move(merged);
    }
    merges.push_back(merge);
    known.insert(product);
  }
  return BpeModel(std::move(base), std::move(merges));
}

std::vector<std::u32string> apply_merges(std::u32string_view word, const BpeModel& model) {
  std::vector<std::u32string> symbols;
  symbols.reserve(word.size());
  for (char32_t cp : word) symbols.emplace_back(1, cp);
  while (symbols.size() > 1) {
    int best_rank = -1;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const int r = model.rank(symbols[i], symbols[i + 1]);
      if (r >= 0 && (best_rank < 0 || r < best_rank)) best_rank = r;
    }
    if (best_rank < 0) break;
    const auto& [left, right] = model.merges()[static_cast<std::size_t>(best_rank)];
    std::vector<std::u32string> merged;
    merged.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
        merged.push_back(left + right);
        ++i;
      } else {
        merged.push_back(std::move(symbols[i]));
      }
    }
    symbols = std::move(merged);
  }
  return symbols;
}

text::TokenSequence bpe_encode(std::string_view text, const BpeModel& model, bool frame) {
  const auto cps = unicode::to_u32(text);
  text::TokenSequence seq;
  seq.framed = frame;
  if (frame) seq.ids.push_back(text::kBos);

  // Out-of-alphabet codepoints split words: they become UNK and never merge.
  std::u32string run;
  auto flush = [&] {
    if (run.empty()) return;
    for (const auto& symbol : apply_merges(run, model)) seq.ids.push_back(*model.id_of(symbol));
    run.clear();
  };
  for (char32_t cp : cps) {
    const auto id = model.id_of(std::u32string(1, cp));
    if (!id) {
      flush();
      seq.ids.push_back(text::kUnk);
    } else if (unicode::is_whitespace(cp)) {
      flush();
      seq.ids.push_back(*id);
    } else {
      run.push_back(cp);
    }
  }
  flush();
  if (frame) seq.ids.push_back(text::kEos);
  return seq;
}

std::string bpe_decode(const text::TokenSequence& tokens, const BpeModel& model) {
  std::u32string out;
  for (TokenId id : tokens.ids) {
    const auto& surface = model.token(id);
    if (id == text::kPad || id == text::kBos || id == text::kEos) continue;
    if (id == text::kUnk) {
      out.push_back(text::kReplacement);
      continue;
    }
    out += surface;
  }
  return unicode::to_utf8(out);
}

void write_model(std::ostream& out, const BpeModel& model) {
  out << "bpe v1 " << model.base_alphabet().size() << ' ' << model.merges().size() << '\n';
  for (char32_t cp : model.base_alphabet()) out << unicode::to_utf8(cp) << '\n';
  for (const auto& [left, right] : model.merges()) {
    out << unicode::to_utf8(left) << '\t' << unicode::to_utf8(right) << '\n';
  }
}

BpeModel read_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("bpe model: missing header");
  std::istringstream header(line);
  std::string magic, version;
  std::size_t base_size = 0, n_merges = 0;
  if (!(header >> magic >> version >> base_size >> n_merges) || magic != "bpe" || version != "v1") {
    throw FormatError("bpe model: bad header '" + line + "'");
  }
  // Base symbols may be whitespace (e.g. a space), so lines are taken verbatim.
  std::vector<char32_t> base;
  for (std::size_t i = 0; i < base_size; ++i) {
    if (!std::getline(in, line)) throw FormatError("bpe model: truncated base alphabet");
    const auto cps = unicode::to_u32(line);
    if (cps.size() != 1) throw FormatError("bpe model: base line " + std::to_string(i + 2) + " is not one codepoint");
    base.push_back(cps[0]);
  }
  std::vector<BpeModel::Merge> merges;
  for (std::size_t i = 0; i < n_merges; ++i) {
    if (!std::getline(in, line)) throw FormatError("bpe model: truncated merge list");
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw FormatError("bpe model: merge line " + std::to_string(i + 1) + " must be left<TAB>right");
    }
    merges.emplace_back(unicode::to_u32(line.substr(0, tab)), unicode::to_u32(line.substr(tab + 1)));
  }
  return BpeModel(std::move(base), std::move(merges));
}

}  // namespace gradet::bpe
