#include "gradet/metrics.hpp"

#include "gradet/textcore.hpp"
#include "gradet/unicode.hpp"

namespace gradet::metrics {

std::optional<double> EditCounts::rate() const {
  if (N == 0) {
    if (distance() == 0) return 0.0;
    return std::nullopt;
  }
  return static_cast<double>(distance()) / static_cast<double>(N);
}

EditCounts& EditCounts::operator+=(const EditCounts& other) {
  S += other.S;
  D += other.D;
  I += other.I;
  N += other.N;
  return *this;
}

EditCounts char_counts(const std::string& reference, const std::string& hypothesis) {
  return edit_counts(unicode::to_u32(unicode::nfc(reference)), unicode::to_u32(unicode::nfc(hypothesis)));
}

EditCounts word_counts(const std::string& reference, const std::string& hypothesis) {
  return edit_counts(unicode::split_words(unicode::to_u32(unicode::nfc(reference))),
                     unicode::split_words(unicode::to_u32(unicode::nfc(hypothesis))));
}

EditCounts grapheme_counts(const std::string& reference, const std::string& hypothesis) {
  return edit_counts(text::segment(unicode::nfc(reference)), text::segment(unicode::nfc(hypothesis)));
}

std::optional<double> cer(const std::string& reference, const std::string& hypothesis) {
  return char_counts(reference, hypothesis).rate();
}

std::optional<double> wer(const std::string& reference, const std::string& hypothesis) {
  return word_counts(reference, hypothesis).rate();
}

SampleScore score(const Sample& sample) {
  return SampleScore{sample.id,
                     sample.reference,
                     sample.hypothesis,
                     char_counts(sample.reference, sample.hypothesis),
                     word_counts(sample.reference, sample.hypothesis),
                     grapheme_counts(sample.reference, sample.hypothesis)};
}

EvalReport aggregate(std::vector<SampleScore> scores) {
  EvalReport report;
  for (const auto& s : scores) {
    report.char_totals += s.chars;
    report.word_totals += s.words;
    report.grapheme_totals += s.graphemes;
  }
  report.per_sample = std::move(scores);
  return report;
}

EvalReport aggregate(std::span<const Sample> samples) {
  std::vector<SampleScore> scores;
  scores.reserve(samples.size());
  for (const auto& s : samples) scores.push_back(score(s));
  return aggregate(std::move(scores));
}

nlohmann::json to_json(const EditCounts& counts) {
  return {{"S", counts.S}, {"D", counts.D}, {"I", counts.I}, {"N", counts.N}};
}

namespace {

nlohmann::json rate_json(const std::optional<double>& rate) {
  return rate ? nlohmann::json(*rate) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : per_sample) {
    samples.push_back({{"id", s.id},
                       {"reference", s.reference},
                       {"hypothesis", s.hypothesis},
                       {"char", metrics::to_json(s.chars)},
                       {"word", metrics::to_json(s.words)},
                       {"grapheme", metrics::to_json(s.graphemes)}});
  }
  return {{"normalization", "NFC applied to reference and hypothesis; CER counts Unicode codepoints"},
          {"cer", rate_json(cer())},
          {"wer", rate_json(wer())},
          {"grapheme_error_rate", rate_json(grapheme_er())},
          {"n_samples", per_sample.size()},
          {"totals",
           {{"char", metrics::to_json(char_totals)},
            {"word", metrics::to_json(word_totals)},
            {"grapheme", metrics::to_json(grapheme_totals)}}},
          {"per_sample", std::move(samples)}};
}

}  // namespace gradet::metrics
