#include <random>

#include "doctest.h"

#include "gradient_suite.hpp"
#include "gradet/model.hpp"
#include "gradet/ops.hpp"

using namespace gradet;

namespace {

ModelConfig toy(Index vocab = 100) {
  ModelConfig c;
  c.hidden = 64;
  c.layers = 2;
  c.heads = 4;
  c.max_seq = 160;
  c.vocab = vocab;
  return c;
}

WordImage random_image(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  WordImage img;
  img.height = c.image_height;
  img.width = c.image_width;
  img.pixels.resize(static_cast<std::size_t>(3 * c.image_height * c.image_width));
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

}  // namespace

TEST_CASE("config: patch grid and validation") {
  ModelConfig c;
  CHECK(c.n_image_tokens() == 128);
  CHECK(c.patch_dim() == 96);
  CHECK(c.text_budget() == 256 - 128 - 1);
  c.vocab = 10;
  CHECK_NOTHROW(c.validate());
  ModelConfig one = c;
  one.image_height = one.patch_height = one.image_width = one.patch_width = 4;
  CHECK(one.n_image_tokens() == 1);

  ModelConfig bad = c;
  bad.image_width = 130;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.heads = 5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.max_seq = 129;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("config: json roundtrip rejects unknown keys") {
  const auto c = toy();
  CHECK(model_config_from_json(to_json(c)) == c);
  auto j = to_json(c);
  j["dropout"] = 0.1;
  CHECK_THROWS(model_config_from_json(j));
}

TEST_CASE("count_params: closed form") {
  auto closed = [](Index P, Index D, Index S, Index V, Index L) {
    const Index layer = 2 * D + 4 * (D * D + D) + 2 * D + (D * 4 * D + 4 * D) + (4 * D * D + D);
    return P * D + D + S * D + V * D + L * layer + 2 * D + D * V;
  };
  CHECK(count_params(toy()) == 129344);
  CHECK(count_params(toy()) == closed(96, 64, 160, 100, 2));
  ModelConfig gpt2;
  gpt2.vocab = 1000;
  CHECK(count_params(gpt2) == closed(96, 768, 256, 1000, 12));
  ModelConfig big = gpt2;
  big.vocab = 50000;
  CHECK(count_params(gpt2) < count_params(big));

  const auto params = ModelParams<double>::init(toy(), 1);
  CHECK(params.count() == count_params(toy()));
  Index from_shapes = 0;
  for (const auto& [name, shape] : param_shapes(toy())) from_shapes += numel(shape);
  CHECK(from_shapes == 129344);
  CHECK(params.tensors.count("lm_head.weight") == 1);
  CHECK(params.tensors.count("tok_embed") == 1);
}

TEST_CASE("init: seeded and scaled") {
  const auto a = ModelParams<double>::init(toy(), 3), b = ModelParams<double>::init(toy(), 3);
  for (const auto& [name, t] : a.tensors) CHECK(t.value() == b.at(name).value());
  const auto& w = a.at("layers.0.mlp.fc.weight").value();
  const double mean = w.mean();
  const double sd = std::sqrt((w.array() - mean).square().mean());
  CHECK(std::abs(sd - 0.02) < 0.001);
  CHECK(a.at("layers.1.ln2.gain").value().isOnes());
  CHECK(a.at("layers.1.attn.q.bias").value().isZero());
}

TEST_CASE("patch_embed: zero image and zero bias give the position rows") {
  auto params = ModelParams<double>::init(toy(), 2);
  WordImage zero = random_image(params.config, 1);
  std::fill(zero.pixels.begin(), zero.pixels.end(), 0.0f);
  const auto emb = patch_embed(zero, params);
  CHECK(emb.shape() == Shape{128, 64});
  const auto& pos = params.at("pos_table");
  CHECK(emb.matrix() == pos.matrix().topRows(128));
}

TEST_CASE("extract_patches: row-major grid, channel-major within a patch") {
  ModelConfig c = toy();
  WordImage img = random_image(c, 5);
  const auto patches = extract_patches<double>(img, c);
  CHECK(patches.shape() == Shape{128, 96});
  // patch (row 1, col 2) is index 1 * 16 + 2; channel 2, y 3, x 5 inside it
  const Index idx = 1 * 16 + 2;
  const Index col = 2 * 32 + 3 * 8 + 5;
  CHECK(patches.matrix()(idx, col) == doctest::Approx(img.at(2, 1 * 4 + 3, 2 * 8 + 5)));
  WordImage wrong = img;
  wrong.width = 64;
  CHECK_THROWS(extract_patches<double>(wrong, c));
}

TEST_CASE("forward: shapes, causality, overflow") {
  const auto params = ModelParams<double>::init(toy(), 4);
  const auto image = random_image(params.config, 2);
  const auto emb = patch_embed(image, params);
  const std::vector<TokenId> text = {5, 6, 7, 8, 9};
  const auto logits = forward(emb, std::span<const TokenId>(text), params);
  CHECK(logits.shape() == Shape{6, 100});

  for (std::size_t k = 0; k < text.size(); ++k) {
    auto changed = text;
    changed[k] = 42;
    const auto other = forward(emb, std::span<const TokenId>(changed), params);
    for (Index r = 0; r <= static_cast<Index>(k); ++r) {
      REQUIRE(other.matrix().row(r) == logits.matrix().row(r));
    }
    CHECK(other.matrix().row(static_cast<Index>(k) + 1) != logits.matrix().row(static_cast<Index>(k) + 1));
  }
  const std::vector<TokenId> too_long(static_cast<std::size_t>(params.config.text_budget() + 1), 5);
  CHECK_THROWS_AS(forward(emb, std::span<const TokenId>(too_long), params), ShapeError);
}

TEST_CASE("forward: a fresh model is close to uniform") {
  const auto params = ModelParams<double>::init(toy(), 9);
  const auto image = random_image(params.config, 3);
  const std::vector<TokenId> text = {10, 20, 30};
  const auto probs = softmax(forward(patch_embed(image, params), std::span<const TokenId>(text), params));
  for (Index r = 0; r < probs.rows(); ++r) {
    CHECK(probs.matrix().row(r).maxCoeff() < 5.0 / 100.0);
    CHECK(probs.matrix().row(r).sum() == doctest::Approx(1.0));
  }
}

TEST_CASE("decoder session matches the full forward pass") {
  const auto params = ModelParams<double>::init(toy(), 6);
  const auto image = random_image(params.config, 4);
  const auto emb = patch_embed(image, params);
  const std::vector<TokenId> text = {11, 3, 57};
  const auto full = forward(emb, std::span<const TokenId>(text), params);

  DecoderSession<double> session(params);
  RowMatrix<double> rows = emb.matrix();
  (void)session.feed(rows);
  auto logits = session.feed_token(text::kBos);
  CHECK((logits.transpose() - full.matrix().row(0)).cwiseAbs().maxCoeff() < 1e-10);
  for (std::size_t i = 0; i < text.size(); ++i) {
    logits = session.feed_token(text[i]);
    CHECK((logits.transpose() - full.matrix().row(static_cast<Index>(i) + 1)).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK(session.length() == 128 + 1 + 3);
  const auto p = softmax_vector(logits);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("generate: budget, framing and determinism") {
  const auto params = ModelParams<float>::init(toy(), 7);
  const auto image = random_image(params.config, 5);
  const auto none = generate(image, params, 0);
  CHECK(none.tokens.ids == std::vector<TokenId>{text::kBos, text::kEos});
  CHECK(none.truncated);
  CHECK(none.tokens.framed);

  const auto a = generate(image, params, 4), b = generate(image, params, 4);
  CHECK(a.tokens == b.tokens);
  CHECK(a.tokens.ids.size() <= 6);
  CHECK(a.tokens.ids.front() == text::kBos);
  CHECK(a.tokens.ids.back() == text::kEos);
}

TEST_CASE("loss: gradient check of the 2-layer toy model (double)") {
  for (const auto& [name, r] : gradcheck::model_suite()) {
    INFO(name, " worst ", r.worst);
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("cast_params preserves names and values") {
  const auto f = ModelParams<float>::init(toy(), 1);
  const auto d = cast_params<double>(f);
  CHECK(d.tensors.size() == f.tensors.size());
  CHECK(d.at("tok_embed").value().cast<float>() == f.at("tok_embed").value());
}
