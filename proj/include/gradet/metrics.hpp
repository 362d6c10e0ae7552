#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace gradet::metrics {

/// Edit operations turning a hypothesis into its reference.
struct EditCounts {
  std::size_t S = 0;  // substitutions
  std::size_t D = 0;  // deletions
  std::size_t I = 0;  // insertions
  std::size_t N = 0;  // reference length

  std::size_t distance() const { return S + D + I; }
  /// (S+D+I)/N. Empty when N == 0 and the hypothesis is not empty as well.
  std::optional<double> rate() const;

  EditCounts& operator+=(const EditCounts& other);
  bool operator==(const EditCounts&) const = default;
};

/// Minimal Levenshtein alignment. Among co-optimal alignments the backtrace prefers
/// substitution (or match), then insertion, then deletion.
template <typename Seq>
EditCounts edit_counts(const Seq& reference, const Seq& hypothesis) {
  const std::size_t n = reference.size();
  const std::size_t m = hypothesis.size();
  std::vector<std::size_t> dp((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return dp[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i, j - 1) + 1, at(i - 1, j) + 1});
    }
  }
  EditCounts counts;
  counts.N = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = reference[i - 1] == hypothesis[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        if (!same) ++counts.S;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
      ++counts.I;
      --j;
    } else {
      ++counts.D;
      --i;
    }
  }
  return counts;
}

/// Codepoint-level counts after NFC on both sides.
EditCounts char_counts(const std::string& reference, const std::string& hypothesis);
/// Counts over maximal non-whitespace runs after NFC on both sides.
EditCounts word_counts(const std::string& reference, const std::string& hypothesis);
/// Counts over grapheme clusters after NFC on both sides.
EditCounts grapheme_counts(const std::string& reference, const std::string& hypothesis);

std::optional<double> cer(const std::string& reference, const std::string& hypothesis);
std::optional<double> wer(const std::string& reference, const std::string& hypothesis);

struct Sample {
  std::string id;
  std::string reference;
  std::string hypothesis;
};

struct SampleScore {
  std::string id;
  std::string reference;
  std::string hypothesis;
  EditCounts chars;
  EditCounts words;
  EditCounts graphemes;
};

struct EvalReport {
  std::vector<SampleScore> per_sample;
  EditCounts char_totals;
  EditCounts word_totals;
  EditCounts grapheme_totals;

  /// Micro-averaged over the totals.
  std::optional<double> cer() const { return char_totals.rate(); }
  std::optional<double> wer() const { return word_totals.rate(); }
  /// Grapheme-cluster error rate; an extra column, not the CER.
  std::optional<double> grapheme_er() const { return grapheme_totals.rate(); }

  nlohmann::json to_json() const;
};

SampleScore score(const Sample& sample);
EvalReport aggregate(std::span<const Sample> samples);
EvalReport aggregate(std::vector<SampleScore> scores);

nlohmann::json to_json(const EditCounts& counts);

}  // namespace gradet::metrics
