#include "gradet/synthgen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "json.hpp"

#include "gradet/random.hpp"
#include "gradet/unicode.hpp"

namespace gradet::synth {

namespace {

std::uint64_t fnv1a(std::u32string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char32_t cp : s) {
    for (int b = 0; b < 4; ++b) {
      h ^= (static_cast<std::uint32_t>(cp) >> (8 * b)) & 0xFF;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::uint64_t bitmap_hash(const GlyphBitmap& g) {
  std::uint64_t h = splitmix64(static_cast<std::uint64_t>(g.rows()) * 131 + static_cast<std::uint64_t>(g.cols()));
  for (Index i = 0; i < g.size(); ++i) h = (h ^ g.data()[i]) * 0x100000001b3ull;
  return h;
}

void stamp(GlyphBitmap& g, double cx, double cy, double radius) {
  const Index y0 = std::max<Index>(0, static_cast<Index>(std::floor(cy - radius - 1)));
  const Index y1 = std::min<Index>(g.rows() - 1, static_cast<Index>(std::ceil(cy + radius + 1)));
  const Index x0 = std::max<Index>(0, static_cast<Index>(std::floor(cx - radius - 1)));
  const Index x1 = std::min<Index>(g.cols() - 1, static_cast<Index>(std::ceil(cx + radius + 1)));
  for (Index y = y0; y <= y1; ++y) {
    for (Index x = x0; x <= x1; ++x) {
      const double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
      const double coverage = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      const auto value = static_cast<std::uint8_t>(std::lround(255.0 * coverage));
      g(y, x) = std::max(g(y, x), value);
    }
  }
}

}  // namespace

bool GlyphAtlas::operator==(const GlyphAtlas& other) const {
  if (seed_ != other.seed_ || glyphs_.size() != other.glyphs_.size()) return false;
  for (const auto& [key, g] : glyphs_) {
    const auto* o = other.find(key);
    if (o == nullptr || o->rows() != g.rows() || o->cols() != g.cols() || !(*o == g).all()) return false;
  }
  return true;
}

GlyphBitmap draw_glyph(std::u32string_view grapheme, std::uint64_t seed, int attempt) {
  Rng rng(derive_seed(seed, {fnv1a(grapheme), static_cast<std::uint64_t>(attempt)}));
  const auto n_cp = static_cast<std::int64_t>(std::max<std::size_t>(1, grapheme.size()));
  const Index width = rng.uniform_int(10, 24 + 6 * (n_cp - 1));
  GlyphBitmap g = GlyphBitmap::Zero(kGlyphHeight, width);

  const double radius = rng.uniform(0.9, 1.4);
  const double lo = 2.0;
  const double x_hi = static_cast<double>(width) - 3.0;
  const double y_hi = static_cast<double>(kGlyphHeight) - 3.0;
  double px = rng.uniform(lo, x_hi);
  double py = rng.uniform(lo, y_hi);
  const auto strokes = rng.uniform_int(3, 6);
  for (std::int64_t s = 0; s < strokes; ++s) {
    const double qx = rng.uniform(lo, x_hi), qy = rng.uniform(lo, y_hi);  // end point
    const double cx = rng.uniform(lo, x_hi), cy = rng.uniform(lo, y_hi);  // control point
    const double length = std::hypot(qx - px, qy - py) + std::hypot(cx - px, cy - py);
    const int steps = std::max(8, static_cast<int>(length * 3));
    for (int k = 0; k <= steps; ++k) {
      const double t = static_cast<double>(k) / steps;
      const double a = (1 - t) * (1 - t), b = 2 * (1 - t) * t, c = t * t;
      stamp(g, a * px + b * cx + c * qx, a * py + b * cy + c * qy, radius);
    }
    px = qx;
    py = qy;
  }
  return g;
}

GlyphAtlas build_atlas(const text::GraphemeVocab& vocab, std::uint64_t seed) {
  std::map<std::u32string, GlyphBitmap> glyphs;
  std::unordered_multimap<std::uint64_t, const GlyphBitmap*> seen;
  for (const auto& grapheme : vocab.graphemes()) {
    for (int attempt = 0;; ++attempt) {
      GlyphBitmap g = draw_glyph(grapheme, seed, attempt);
      const auto h = bitmap_hash(g);
      bool collision = false;
      auto [first, last] = seen.equal_range(h);
      for (auto it = first; it != last; ++it) {
        const GlyphBitmap& other = *it->second;
        if (other.rows() == g.rows() && other.cols() == g.cols() && (other == g).all()) collision = true;
      }
      if (collision) continue;
      auto [pos, inserted] = glyphs.emplace(grapheme, std::move(g));
      seen.emplace(h, &pos->second);
      break;
    }
  }
  return GlyphAtlas(std::move(glyphs), seed);
}

void RenderOptions::enable(std::string_view tag) {
  if (tag == "bend") bend = true;
  else if (tag == "wave") wave = true;
  else if (tag == "blur") blur = true;
  else if (tag == "fragment") fragment = true;
  else if (tag == "noise") noise = true;
  else if (tag == "all") with_all_distortions();
  else if (tag == "none") bend = wave = blur = fragment = noise = false;
  else throw UsageError("unknown distortion '" + std::string(tag) + "'");
}

namespace {

// out(y, x) = in(y - dy(x), x) with linear interpolation; white outside.
template <typename Displacement>
GrayImage shift_columns(const GrayImage& image, Displacement dy) {
  GrayImage out(image.rows(), image.cols());
  for (Index x = 0; x < image.cols(); ++x) {
    const double d = dy(static_cast<double>(x));
    for (Index y = 0; y < image.rows(); ++y) {
      const double src = static_cast<double>(y) - d;
      const auto y0 = static_cast<Index>(std::floor(src));
      const double f = src - static_cast<double>(y0);
      auto sample = [&](Index yy) { return (yy < 0 || yy >= image.rows()) ? 1.0f : image(yy, x); };
      out(y, x) = static_cast<float>((1.0 - f) * sample(y0) + f * sample(y0 + 1));
    }
  }
  return out;
}

}  // namespace

GrayImage bend(const GrayImage& image, double amplitude) {
  const double w = static_cast<double>(image.cols());
  return shift_columns(image, [&](double x) {
    const double u = x / w - 0.5;
    return amplitude * u * u;
  });
}

GrayImage wave(const GrayImage& image, double amplitude, double wavelength, double phase) {
  return shift_columns(image, [&](double x) {
    return amplitude * std::sin(2.0 * std::numbers::pi * x / wavelength + phase);
  });
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

GrayImage gaussian_blur(const GrayImage& image, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const auto radius = static_cast<Index>(k.size() / 2);
  const Index h = image.rows(), w = image.cols();
  GrayImage tmp(h, w), out(h, w);
  // Edges replicate the border pixel.
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (Index i = -radius; i <= radius; ++i) {
        acc += k[static_cast<std::size_t>(i + radius)] * image(y, std::clamp<Index>(x + i, 0, w - 1));
      }
      tmp(y, x) = static_cast<float>(acc);
    }
  }
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (Index i = -radius; i <= radius; ++i) {
        acc += k[static_cast<std::size_t>(i + radius)] * tmp(std::clamp<Index>(y + i, 0, h - 1), x);
      }
      out(y, x) = static_cast<float>(acc);
    }
  }
  return out;
}

namespace {

GrayImage fragment(const GrayImage& image, const GlyphAtlas& atlas, const RenderOptions& opts, Rng& rng) {
  Index top = 0, bottom = 0, left = 0, right = 0;
  for (Index* edge : {&top, &bottom, &left, &right}) {
    if (rng.bernoulli(0.5)) *edge = rng.uniform_int(0, opts.fragment_max_crop);
  }
  const Index h = std::max<Index>(1, image.rows() - top - bottom);
  const Index w = std::max<Index>(1, image.cols() - left - right);
  GrayImage out = image.block(top, left, h, w);
  if (atlas.size() == 0) return out;

  const auto slivers = rng.uniform_int(opts.fragment_slivers.lo, opts.fragment_slivers.hi);
  for (std::int64_t s = 0; s < slivers; ++s) {
    auto it = atlas.glyphs().begin();
    std::advance(it, rng.uniform_int(0, static_cast<std::int64_t>(atlas.size()) - 1));
    const GlyphBitmap& g = it->second;
    const Index sw = std::min<Index>(g.cols(), rng.uniform_int(opts.sliver_width.lo, opts.sliver_width.hi));
    const bool at_left = rng.bernoulli(0.5);
    // A cut-off neighbour: its trailing columns on the left margin, leading columns on the right.
    const Index src_x = at_left ? g.cols() - sw : 0;
    const Index dst_x = at_left ? 0 : w - sw;
    const Index dst_y = std::max<Index>(0, (h - kGlyphHeight) / 2 + rng.uniform_int(-2, 2));
    for (Index y = 0; y < kGlyphHeight && dst_y + y < h; ++y) {
      for (Index x = 0; x < sw; ++x) {
        if (dst_x + x < 0 || dst_x + x >= w) continue;
        const float ink = 1.0f - static_cast<float>(g(y, src_x + x)) / 255.0f;
        out(dst_y + y, dst_x + x) = std::min(out(dst_y + y, dst_x + x), ink);
      }
    }
  }
  return out;
}

}  // namespace

SynthSample render(std::string_view text, const GlyphAtlas& atlas, const RenderOptions& opts, std::uint64_t seed) {
  Rng rng(seed);
  const auto clusters = text::segment(text);

  struct Placement {
    const GlyphBitmap* glyph;
    Index x;
  };
  std::vector<Placement> placements;
  Index cursor = opts.margin;
  bool previous_glyph = false;
  for (const auto& cluster : clusters) {
    if (cluster.size() == 1 && unicode::is_whitespace(cluster.codepoints[0])) {
      if (previous_glyph) cursor += rng.uniform_int(opts.word_gap.lo, opts.word_gap.hi);
      previous_glyph = false;
      continue;
    }
    const GlyphBitmap* glyph = atlas.find(cluster.codepoints);
    if (glyph == nullptr) throw std::invalid_argument("render: cluster '" + cluster.utf8() + "' is not in the atlas");
    if (previous_glyph) cursor += rng.uniform_int(opts.glyph_gap.lo, opts.glyph_gap.hi);
    placements.push_back({glyph, cursor});
    cursor += glyph->cols();
    previous_glyph = true;
  }

  const Index width = std::max(opts.min_width, cursor + opts.margin);
  const Index height = opts.canvas_height;
  GrayImage canvas = GrayImage::Ones(height, width);
  const Index top = std::max<Index>(0, (height - kGlyphHeight) / 2);
  for (const auto& p : placements) {
    for (Index y = 0; y < kGlyphHeight && top + y < height; ++y) {
      for (Index x = 0; x < p.glyph->cols(); ++x) {
        canvas(top + y, p.x + x) = 1.0f - static_cast<float>((*p.glyph)(y, x)) / 255.0f;
      }
    }
  }

  SynthSample sample;
  sample.text = std::string(text);
  sample.rng_seed = seed;
  sample.glyphs_placed = placements.size();
  if (opts.bend) {
    canvas = bend(canvas, rng.uniform(opts.bend_amplitude.lo, opts.bend_amplitude.hi));
    sample.tags.emplace_back("bend");
  }
  if (opts.wave) {
    const double amplitude = rng.uniform(opts.wave_amplitude.lo, opts.wave_amplitude.hi);
    const double wavelength = rng.uniform(opts.wave_length.lo, opts.wave_length.hi);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    canvas = wave(canvas, amplitude, wavelength, phase);
    sample.tags.emplace_back("wave");
  }
  if (opts.blur) {
    canvas = gaussian_blur(canvas, rng.uniform(opts.blur_sigma.lo, opts.blur_sigma.hi));
    sample.tags.emplace_back("blur");
  }
  if (opts.fragment) {
    canvas = fragment(canvas, atlas, opts, rng);
    sample.tags.emplace_back("fragment");
  }
  if (opts.noise) {
    for (Index i = 0; i < canvas.size(); ++i) {
      canvas.data()[i] = static_cast<float>(std::clamp(canvas.data()[i] + rng.normal(0.0, opts.noise_sigma), 0.0, 1.0));
    }
    sample.tags.emplace_back("noise");
  }
  canvas = canvas.cwiseMax(0.0f).cwiseMin(1.0f);
  sample.canvas = std::move(canvas);
  return sample;
}

std::filesystem::path gen_dataset(std::span<const std::string> words, const GlyphAtlas& atlas, std::size_t n_samples,
                                  const DatasetOptions& opts, std::uint64_t seed,
                                  const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  // Corpus entries may hold several words; the draw is over single words.
  std::vector<std::string> pool;
  for (const auto& entry : words) {
    for (const auto& w : unicode::split_words(unicode::to_u32(entry))) pool.push_back(unicode::to_utf8(w));
  }
  if (n_samples > 0 && pool.empty()) throw std::invalid_argument("gen_dataset: empty word list");
  fs::create_directories(out_dir / "images");

  std::vector<std::string> lines(n_samples);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n_samples; i = next++) {
      try {
        Rng rng(derive_seed(seed, {i, 0}));
        std::string label;
        const auto n_words = opts.mode == SampleMode::Word
                                 ? 1
                                 : rng.uniform_int(opts.words_per_line.lo, opts.words_per_line.hi);
        for (std::int64_t k = 0; k < n_words; ++k) {
          if (k > 0) label += ' ';
          label += pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
        }
        const std::uint64_t render_seed = derive_seed(seed, {i, 1}) >> 11;  // exact in JSON doubles
        const SynthSample sample = render(label, atlas, opts.render, render_seed);
        char name[32];
        std::snprintf(name, sizeof(name), "images/%07zu.pgm", i);
        write_pgm((out_dir / name).string(), sample.canvas);
        nlohmann::json record = {{"image", name}, {"text", label}, {"tags", sample.tags}, {"seed", render_seed}};
        lines[i] = record.dump();
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n_samples;
      }
    }
  };
  const int threads = std::max(1, opts.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  const fs::path manifest = out_dir / "manifest.jsonl";
  std::ofstream out(manifest, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + manifest.string());
  for (const auto& line : lines) out << line << '\n';
  return manifest;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!record.contains("image") || !record["image"].is_string() || !record.contains("text") ||
        !record["text"].is_string()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": record needs string fields image and text");
    }
    ManifestEntry entry;
    entry.image = record["image"].get<std::string>();
    entry.text = unicode::nfc(record["text"].get<std::string>());
    if (record.contains("tags")) entry.tags = record["tags"].get<std::vector<std::string>>();
    if (record.contains("seed")) entry.seed = record["seed"].get<std::uint64_t>();
    const std::filesystem::path image_path(entry.image);
    entry.resolved = image_path.is_absolute() ? image_path : base / image_path;
    entries.push_back(std::move(entry));
  }
  return entries;
}

std::vector<std::u32string> pseudo_inventory() {
  static const std::vector<char32_t> consonants = {0x0995, 0x0996, 0x0997, 0x0998, 0x099A, 0x099C, 0x099F,
                                                   0x09A1, 0x09A4, 0x09A6, 0x09A8, 0x09AA, 0x09AC, 0x09AE,
                                                   0x09AF, 0x09B0, 0x09B2, 0x09B6, 0x09B8, 0x09B9};
  static const std::vector<char32_t> signs = {0x09BE, 0x09BF, 0x09C0, 0x09C1, 0x09C7, 0x09CB, 0x09C3};
  static const std::vector<std::u32string> conjuncts = {
      U"ক্ত", U"ন্ত", U"স্ত", U"ন্দ",
      U"ম্প", U"ক্ষ", U"স্থ", U"ন্ধ",
      U"প্র", U"ত্র"};
  std::vector<std::u32string> inventory;
  for (std::size_t i = 0; i < consonants.size(); ++i) {
    inventory.emplace_back(1, consonants[i]);
    for (std::size_t k : {i % 7, (i + 2) % 7, (i + 4) % 7}) {
      inventory.push_back(std::u32string{consonants[i], signs[k]});
    }
  }
  for (const auto& c : conjuncts) inventory.push_back(c);
  for (char32_t v : {0x0985, 0x0986, 0x0987, 0x0989, 0x098F, 0x0993}) inventory.emplace_back(1, v);
  for (char32_t c : {0x0995, 0x09B0, 0x09B8}) inventory.push_back(std::u32string{c, 0x0982});
  return inventory;
}

std::vector<std::string> pseudo_words(std::size_t n, std::uint64_t seed) {
  const auto inventory = pseudo_inventory();
  // Zipf weights over a seed-dependent permutation of the inventory.
  std::vector<std::size_t> order(inventory.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, {0x70736575646fULL}));
  rng.shuffle(order.begin(), order.end());
  std::vector<double> cumulative(inventory.size());
  double total = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    total += 1.0 / (static_cast<double>(r) + 8.0);
    cumulative[r] = total;
  }
  auto draw = [&] {
    const double u = rng.uniform() * total;
    const auto r = static_cast<std::size_t>(std::lower_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    return order[std::min(r, order.size() - 1)];
  };

  std::vector<std::string> words;
  std::set<std::string> seen;
  while (words.size() < n) {
    const auto length = rng.uniform_int(2, 5);
    std::u32string word;
    for (std::int64_t k = 0; k < length; ++k) {
      std::size_t g = draw();
      // Independent vowels only start words.
      while (k > 0 && text::classify(inventory[g][0]) == text::CharClass::IndependentVowel) g = draw();
      word += inventory[g];
    }
    auto utf8 = unicode::to_utf8(word);
    if (seen.insert(utf8).second) words.push_back(std::move(utf8));
  }
  return words;
}

}  // namespace gradet::synth
