#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gradet/image.hpp"
#include "gradet/textcore.hpp"

namespace gradet::synth {

/// Glyph ink intensities 0..255, 24 rows, variable width.
using GlyphBitmap = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr Index kGlyphHeight = 24;

/// Procedural stand-in for a handwriting font: one stroke-pattern bitmap per grapheme.
class GlyphAtlas {
 public:
  GlyphAtlas() = default;
  GlyphAtlas(std::map<std::u32string, GlyphBitmap> glyphs, std::uint64_t seed)
      : glyphs_(std::move(glyphs)), seed_(seed) {}

  const GlyphBitmap* find(const std::u32string& grapheme) const {
    auto it = glyphs_.find(grapheme);
    return it == glyphs_.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return glyphs_.size(); }
  std::uint64_t seed() const { return seed_; }
  const std::map<std::u32string, GlyphBitmap>& glyphs() const { return glyphs_; }

  bool operator==(const GlyphAtlas& other) const;

 private:
  std::map<std::u32string, GlyphBitmap> glyphs_;
  std::uint64_t seed_ = 0;
};

/// 3-6 connected strokes in a 24 x W box, W in [10, 24 + 6 (codepoints - 1)].
/// A pure function of (grapheme, seed, attempt).
GlyphBitmap draw_glyph(std::u32string_view grapheme, std::uint64_t seed, int attempt = 0);

/// One glyph per vocabulary grapheme; a glyph identical to an earlier one is redrawn
/// with the next attempt number.
GlyphAtlas build_atlas(const text::GraphemeVocab& vocab, std::uint64_t seed);

template <typename T>
struct Range {
  T lo;
  T hi;
};

struct RenderOptions {
  bool bend = false;
  bool wave = false;
  bool blur = false;
  bool fragment = false;
  bool noise = false;

  Index canvas_height = 32;
  Index min_width = 128;
  Index margin = 2;
  Range<int> glyph_gap{1, 4};
  Range<int> word_gap{8, 16};

  Range<double> bend_amplitude{-6.0, 6.0};
  Range<double> wave_amplitude{1.0, 3.0};
  Range<double> wave_length{40.0, 120.0};
  Range<double> blur_sigma{0.5, 1.5};
  int fragment_max_crop = 3;
  Range<int> fragment_slivers{1, 2};
  Range<int> sliver_width{2, 5};
  double noise_sigma = 0.02;

  static RenderOptions word() { return {}; }
  static RenderOptions line() {
    RenderOptions o;
    o.canvas_height = 48;
    o.min_width = 256;
    return o;
  }
  RenderOptions& with_all_distortions() {
    bend = wave = blur = fragment = noise = true;
    return *this;
  }
  /// Enables distortions by tag: "bend", "wave", "blur", "fragment", "noise", "all", "none".
  void enable(std::string_view tag);
};

struct SynthSample {
  GrayImage canvas;
  std::string text;
  std::vector<std::string> tags;
  std::uint64_t rng_seed = 0;
  std::size_t glyphs_placed = 0;

  WordImage image() const { return WordImage::from_gray(canvas, "synthetic"); }
};

/// Glyphs joined by U[1,4] px gaps, words by U[8,16] px gaps, on white, then the
/// enabled distortions in the order bend, wave, blur, fragment, noise.
/// Throws std::invalid_argument naming the first cluster missing from the atlas.
SynthSample render(std::string_view text, const GlyphAtlas& atlas, const RenderOptions& opts,
                   std::uint64_t seed);

// Individual distortions, exposed for testing.
GrayImage bend(const GrayImage& image, double amplitude);
GrayImage wave(const GrayImage& image, double amplitude, double wavelength, double phase);
std::vector<double> gaussian_kernel(double sigma);
GrayImage gaussian_blur(const GrayImage& image, double sigma);

enum class SampleMode { Word, Line };

struct DatasetOptions {
  SampleMode mode = SampleMode::Word;
  RenderOptions render = RenderOptions::word();
  Range<int> words_per_line{3, 8};
  int threads = 1;
};

/// Renders `n_samples` images drawn uniformly from `words` into out_dir/images and
/// writes out_dir/manifest.jsonl. Sample i depends only on (seed, i).
std::filesystem::path gen_dataset(std::span<const std::string> words, const GlyphAtlas& atlas,
                                  std::size_t n_samples, const DatasetOptions& opts, std::uint64_t seed,
                                  const std::filesystem::path& out_dir);

struct ManifestEntry {
  std::string image;  // as written in the manifest
  std::string text;
  std::vector<std::string> tags;
  std::uint64_t seed = 0;
  std::filesystem::path resolved;  // image path resolved against the manifest directory
};

/// Throws FormatError on malformed lines. Labels are NFC-normalized.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Pseudo-Bengali words over a fixed inventory of about a hundred grapheme clusters
/// (bare consonants, consonant + vowel sign, conjuncts, independent vowels, anusvara),
/// 2-5 clusters each, Zipf-weighted. Stands in for a text corpus.
std::vector<std::string> pseudo_words(std::size_t n, std::uint64_t seed);

/// The cluster inventory `pseudo_words` draws from.
std::vector<std::u32string> pseudo_inventory();

}  // namespace gradet::synth
