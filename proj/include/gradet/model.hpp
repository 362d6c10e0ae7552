#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gradet/image.hpp"
#include "gradet/optim.hpp"
#include "gradet/random.hpp"
#include "gradet/tensor.hpp"
#include "gradet/textcore.hpp"

namespace gradet {

/// Image size, patch grid and decoder dimensions. Defaults are the full-size word model.
struct ModelConfig {
  Index image_height = 32;
  Index image_width = 128;
  Index patch_height = 4;
  Index patch_width = 8;
  Index hidden = 768;
  Index layers = 12;
  Index heads = 12;
  Index max_seq = 256;
  Index vocab = 0;

  Index n_image_tokens() const { return (image_height / patch_height) * (image_width / patch_width); }
  Index patch_dim() const { return WordImage::kChannels * patch_height * patch_width; }
  Index head_dim() const { return hidden / heads; }
  /// Largest number of text tokens after BOS that fit the sequence budget.
  Index text_budget() const { return max_seq - n_image_tokens() - 1; }

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

/// Canonical tensor names and shapes, in checkpoint order.
std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& config);

/// Exact number of learnable scalars.
Index count_params(const ModelConfig& config);

template <typename Scalar>
struct ModelParams {
  ModelConfig config;
  ParamMap<Scalar> tensors;

  /// Normal(0, 0.02) weights, zero biases, unit layer-norm gains.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  const Tensor<Scalar>& at(const std::string& name) const;
  Index count() const;
};

struct ForwardOptions {
  double dropout = 0.0;
  Rng* rng = nullptr;  // required when dropout > 0
};

/// Image as an [N_img, 3 * p_h * p_w] matrix: patches in row-major grid order, each
/// flattened channel-major. The image must already be (3, H, W).
template <typename Scalar>
Tensor<Scalar> extract_patches(const WordImage& image, const ModelConfig& config);

/// Linear projection of each patch plus learned positions 0..N_img-1: [N_img, D].
template <typename Scalar>
Tensor<Scalar> patch_embed(const WordImage& image, const ModelParams<Scalar>& params);

/// Decoder over [image embeds; BOS; text]. Returns pre-softmax logits for the BOS slot and
/// every text slot: [len(text) + 1, V].
template <typename Scalar>
Tensor<Scalar> forward(const Tensor<Scalar>& image_embeds, std::span<const TokenId> text_tokens,
                       const ModelParams<Scalar>& params, const ForwardOptions& opts = {});

/// Mean cross-entropy of [t1..tL, EOS] against the predictions of slots BOS..tL; PAD
/// targets are ignored. `targets` excludes BOS and EOS.
template <typename Scalar>
Tensor<Scalar> loss(const WordImage& image, std::span<const TokenId> targets, const ModelParams<Scalar>& params,
                    const ForwardOptions& opts = {});

struct GenerateResult {
  text::TokenSequence tokens;  // framed
  bool truncated = false;
};

/// Greedy decoding (ties go to the lowest id) until EOS or until min(max_new, text budget)
/// tokens have been produced; then EOS is appended and the result flagged truncated.
template <typename Scalar>
GenerateResult generate(const WordImage& image, const ModelParams<Scalar>& params, Index max_new);

/// Incremental decoder with a key/value cache, used by generate.
template <typename Scalar>
class DecoderSession {
 public:
  explicit DecoderSession(const ModelParams<Scalar>& params);

  /// Appends input rows (embeddings with positions added) and returns the logits of the
  /// last appended row.
  Vector<Scalar> feed(const RowMatrix<Scalar>& rows);
  /// Embeds `token` at the next position and feeds it.
  Vector<Scalar> feed_token(TokenId token);
  Index length() const { return length_; }

 private:
  const ModelParams<Scalar>& params_;
  std::vector<RowMatrix<Scalar>> keys_;
  std::vector<RowMatrix<Scalar>> values_;
  Index length_ = 0;
};

template <typename Scalar>
Vector<Scalar> softmax_vector(const Vector<Scalar>& logits);

/// Converts a parameter set between precisions.
template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& params) {
  ModelParams<To> out;
  out.config = params.config;
  for (const auto& [name, t] : params.tensors) {
    out.tensors.emplace(name, Tensor<To>(t.shape(), t.value().template cast<To>(), t.requires_grad()));
  }
  return out;
}

}  // namespace gradet
