#include "gradet/model.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "gradet/ops.hpp"

namespace gradet {

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("model config: " + what);
  };
  require(image_height > 0 && image_width > 0 && patch_height > 0 && patch_width > 0, "sizes must be positive");
  require(hidden > 0 && layers > 0 && heads > 0 && max_seq > 0, "dimensions must be positive");
  require(image_height % patch_height == 0, "image_height must be a multiple of patch_height");
  require(image_width % patch_width == 0, "image_width must be a multiple of patch_width");
  require(hidden % heads == 0, "hidden must be a multiple of heads");
  require(n_image_tokens() + 1 < max_seq, "image tokens + BOS must be shorter than max_seq");
  require(vocab >= text::kNumSpecial, "vocab must include the special tokens");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"image_height", c.image_height}, {"image_width", c.image_width}, {"patch_height", c.patch_height},
          {"patch_width", c.patch_width},   {"hidden", c.hidden},           {"layers", c.layers},
          {"heads", c.heads},               {"max_seq", c.max_seq},         {"vocab", c.vocab}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  static const std::set<std::string> known = {"image_height", "image_width", "patch_height", "patch_width", "hidden",
                                              "layers",       "heads",       "max_seq",      "vocab"};
  if (!j.is_object()) throw FormatError("model config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw FormatError("model config: unknown key '" + key + "'");
    if (!value.is_number_integer()) throw FormatError("model config: '" + key + "' must be an integer");
  }
  auto get = [&](const char* key, Index& field) {
    if (j.contains(key)) field = j[key].get<Index>();
  };
  get("image_height", c.image_height);
  get("image_width", c.image_width);
  get("patch_height", c.patch_height);
  get("patch_width", c.patch_width);
  get("hidden", c.hidden);
  get("layers", c.layers);
  get("heads", c.heads);
  get("max_seq", c.max_seq);
  get("vocab", c.vocab);
  return c;
}

std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& c) {
  const Index d = c.hidden;
  std::vector<std::pair<std::string, Shape>> shapes = {
      {"patch_proj.weight", {c.patch_dim(), d}},
      {"patch_proj.bias", {d}},
      {"pos_table", {c.max_seq, d}},
      {"tok_embed", {c.vocab, d}},
  };
  for (Index l = 0; l < c.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    shapes.push_back({p + "ln1.gain", {d}});
    shapes.push_back({p + "ln1.bias", {d}});
    for (const char* proj : {"q", "k", "v", "o"}) {
      shapes.push_back({p + "attn." + proj + ".weight", {d, d}});
      shapes.push_back({p + "attn." + proj + ".bias", {d}});
    }
    shapes.push_back({p + "ln2.gain", {d}});
    shapes.push_back({p + "ln2.bias", {d}});
    shapes.push_back({p + "mlp.fc.weight", {d, 4 * d}});
    shapes.push_back({p + "mlp.fc.bias", {4 * d}});
    shapes.push_back({p + "mlp.proj.weight", {4 * d, d}});
    shapes.push_back({p + "mlp.proj.bias", {d}});
  }
  shapes.push_back({"ln_f.gain", {d}});
  shapes.push_back({"ln_f.bias", {d}});
  shapes.push_back({"lm_head.weight", {d, c.vocab}});
  return shapes;
}

Index count_params(const ModelConfig& config) {
  Index total = 0;
  for (const auto& [name, shape] : param_shapes(config)) total += numel(shape);
  return total;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename Scalar>
class NoGradScope {
 public:
  NoGradScope() : previous_(active_tape<Scalar>()) { active_tape<Scalar>() = nullptr; }
  ~NoGradScope() { active_tape<Scalar>() = previous_; }

 private:
  Tape<Scalar>* previous_;
};

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const ModelParams<Scalar>& p, const std::string& prefix) {
  return add(matmul(x, p.at(prefix + ".weight")), p.at(prefix + ".bias"));
}

template <typename Scalar>
Tensor<Scalar> maybe_dropout(const Tensor<Scalar>& x, const ForwardOptions& opts) {
  if (opts.dropout <= 0.0) return x;
  if (opts.rng == nullptr) throw std::invalid_argument("forward: dropout needs an rng");
  return dropout(x, opts.dropout, *opts.rng);
}

}  // namespace

template <typename Scalar>
ModelParams<Scalar> ModelParams<Scalar>::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams<Scalar> params;
  params.config = config;
  Rng rng(seed);
  for (const auto& [name, shape] : param_shapes(config)) {
    Tensor<Scalar> t = Tensor<Scalar>::zeros(shape, true);
    if (ends_with(name, ".gain")) {
      t.value().setOnes();
    } else if (!ends_with(name, ".bias")) {
      for (Index i = 0; i < t.size(); ++i) t.value()[i] = static_cast<Scalar>(rng.normal(0.0, 0.02));
    }
    params.tensors.emplace(name, std::move(t));
  }
  return params;
}

template <typename Scalar>
const Tensor<Scalar>& ModelParams<Scalar>::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("model has no tensor named " + name);
  return it->second;
}

template <typename Scalar>
Index ModelParams<Scalar>::count() const {
  Index total = 0;
  for (const auto& [name, t] : tensors) total += t.size();
  return total;
}

template <typename Scalar>
Tensor<Scalar> extract_patches(const WordImage& image, const ModelConfig& c) {
  if (image.height != c.image_height || image.width != c.image_width ||
      image.pixels.size() != static_cast<std::size_t>(WordImage::kChannels * image.height * image.width)) {
    throw ShapeError("patch_embed: expected image (3, " + std::to_string(c.image_height) + ", " +
                     std::to_string(c.image_width) + "), got (3, " + std::to_string(image.height) + ", " +
                     std::to_string(image.width) + ")");
  }
  const Index grid_w = c.image_width / c.patch_width;
  const Index n = c.n_image_tokens();
  Tensor<Scalar> patches = Tensor<Scalar>::zeros({n, c.patch_dim()});
  auto m = patches.matrix();
  for (Index p = 0; p < n; ++p) {
    const Index y0 = (p / grid_w) * c.patch_height;
    const Index x0 = (p % grid_w) * c.patch_width;
    Index k = 0;
    for (Index ch = 0; ch < WordImage::kChannels; ++ch) {
      for (Index dy = 0; dy < c.patch_height; ++dy) {
        for (Index dx = 0; dx < c.patch_width; ++dx) m(p, k++) = static_cast<Scalar>(image.at(ch, y0 + dy, x0 + dx));
      }
    }
  }
  return patches;
}

template <typename Scalar>
Tensor<Scalar> patch_embed(const WordImage& image, const ModelParams<Scalar>& params) {
  const auto& c = params.config;
  const Tensor<Scalar> patches = extract_patches<Scalar>(image, c);
  const Tensor<Scalar> projected = linear(patches, params, "patch_proj");
  return add(projected, slice(params.at("pos_table"), 0, 0, c.n_image_tokens()));
}

template <typename Scalar>
Tensor<Scalar> forward(const Tensor<Scalar>& image_embeds, std::span<const TokenId> text_tokens,
                       const ModelParams<Scalar>& params, const ForwardOptions& opts) {
  const auto& c = params.config;
  if (image_embeds.ndim() != 2 || image_embeds.dim(1) != c.hidden) {
    throw ShapeError("forward: image embeddings must be [N, " + std::to_string(c.hidden) + "], got " +
                     to_string(image_embeds.shape()));
  }
  const Index n_img = image_embeds.dim(0);
  const Index total = n_img + 1 + static_cast<Index>(text_tokens.size());
  if (total > c.max_seq) {
    throw ShapeError("forward: sequence of " + std::to_string(total) + " slots exceeds max_seq " +
                     std::to_string(c.max_seq));
  }

  std::vector<TokenId> ids;
  ids.reserve(text_tokens.size() + 1);
  ids.push_back(text::kBos);
  ids.insert(ids.end(), text_tokens.begin(), text_tokens.end());
  Tensor<Scalar> tokens = embedding_lookup(params.at("tok_embed"), std::span<const TokenId>(ids));
  tokens = add(tokens, slice(params.at("pos_table"), 0, n_img, total));
  Tensor<Scalar> x = concat({image_embeds, tokens}, 0);

  const Tensor<Scalar> mask = causal_mask<Scalar>(total);
  const Index dh = c.head_dim();
  const auto inv_sqrt = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (Index l = 0; l < c.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    const Tensor<Scalar> h = layer_norm(x, params.at(p + "ln1.gain"), params.at(p + "ln1.bias"));
    const Tensor<Scalar> q = linear(h, params, p + "attn.q");
    const Tensor<Scalar> k = linear(h, params, p + "attn.k");
    const Tensor<Scalar> v = linear(h, params, p + "attn.v");
    std::vector<Tensor<Scalar>> heads;
    heads.reserve(static_cast<std::size_t>(c.heads));
    for (Index hd = 0; hd < c.heads; ++hd) {
      const Tensor<Scalar> qh = slice(q, 1, hd * dh, (hd + 1) * dh);
      const Tensor<Scalar> kh = slice(k, 1, hd * dh, (hd + 1) * dh);
      const Tensor<Scalar> vh = slice(v, 1, hd * dh, (hd + 1) * dh);
      const Tensor<Scalar> scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt), mask);
      heads.push_back(matmul(softmax(scores), vh));
    }
    const Tensor<Scalar> attn = linear(concat(std::span<const Tensor<Scalar>>(heads), 1), params, p + "attn.o");
    x = add(x, maybe_dropout(attn, opts));
    const Tensor<Scalar> h2 = layer_norm(x, params.at(p + "ln2.gain"), params.at(p + "ln2.bias"));
    const Tensor<Scalar> mlp = linear(gelu(linear(h2, params, p + "mlp.fc")), params, p + "mlp.proj");
    x = add(x, maybe_dropout(mlp, opts));
  }
  Tensor<Scalar> text_slots = slice(x, 0, n_img, total);
  text_slots = layer_norm(text_slots, params.at("ln_f.gain"), params.at("ln_f.bias"));
  return matmul(text_slots, params.at("lm_head.weight"));
}

template <typename Scalar>
Tensor<Scalar> loss(const WordImage& image, std::span<const TokenId> targets, const ModelParams<Scalar>& params,
                    const ForwardOptions& opts) {
  const Tensor<Scalar> embeds = patch_embed(image, params);
  const Tensor<Scalar> logits = forward(embeds, targets, params, opts);
  std::vector<TokenId> shifted(targets.begin(), targets.end());
  shifted.push_back(text::kEos);
  return cross_entropy(logits, std::span<const TokenId>(shifted), text::kPad);
}

template <typename Scalar>
Vector<Scalar> softmax_vector(const Vector<Scalar>& logits) {
  Vector<Scalar> p = (logits.array() - logits.maxCoeff()).exp().matrix();
  return p / p.sum();
}

namespace {

template <typename Scalar>
using CMap = Eigen::Map<const RowMatrix<Scalar>>;

template <typename Scalar>
CMap<Scalar> weight(const ModelParams<Scalar>& p, const std::string& name) {
  const auto& t = p.at(name);
  return CMap<Scalar>(t.data(), t.rows(), t.cols());
}

template <typename Scalar>
Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> row_vector(const ModelParams<Scalar>& p,
                                                                      const std::string& name) {
  const auto& t = p.at(name);
  return Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(t.data(), t.size());
}

template <typename Scalar>
RowMatrix<Scalar> layer_norm_rows(const RowMatrix<Scalar>& x, const ModelParams<Scalar>& p, const std::string& prefix) {
  const auto gain = row_vector(p, prefix + ".gain");
  const auto bias = row_vector(p, prefix + ".bias");
  RowMatrix<Scalar> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).mean();
    const Scalar var = (x.row(r).array() - mean).square().mean();
    const Scalar rstd = Scalar(1) / std::sqrt(var + Scalar(1e-5));
    out.row(r) = ((x.row(r).array() - mean) * rstd * gain.array() + bias.array()).matrix();
  }
  return out;
}

template <typename Scalar>
RowMatrix<Scalar> affine(const RowMatrix<Scalar>& x, const ModelParams<Scalar>& p, const std::string& prefix) {
  RowMatrix<Scalar> out = x * weight(p, prefix + ".weight");
  out.rowwise() += row_vector(p, prefix + ".bias");
  return out;
}

}  // namespace

template <typename Scalar>
DecoderSession<Scalar>::DecoderSession(const ModelParams<Scalar>& params) : params_(params) {
  const auto& c = params.config;
  keys_.assign(static_cast<std::size_t>(c.layers), RowMatrix<Scalar>::Zero(c.max_seq, c.hidden));
  values_.assign(static_cast<std::size_t>(c.layers), RowMatrix<Scalar>::Zero(c.max_seq, c.hidden));
}

template <typename Scalar>
Vector<Scalar> DecoderSession<Scalar>::feed(const RowMatrix<Scalar>& rows) {
  const auto& c = params_.config;
  const Index n = rows.rows();
  const Index start = length_;
  if (n == 0) throw std::invalid_argument("DecoderSession::feed: no rows");
  if (start + n > c.max_seq) throw ShapeError("DecoderSession::feed: sequence exceeds max_seq");
  const Index end = start + n;
  const Index dh = c.head_dim();
  const auto inv_sqrt = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
  const Scalar c0 = static_cast<Scalar>(std::sqrt(2.0 / std::numbers::pi));
  const Scalar k0 = Scalar(0.044715);

  RowMatrix<Scalar> x = rows;
  for (Index l = 0; l < c.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    auto& keys = keys_[static_cast<std::size_t>(l)];
    auto& values = values_[static_cast<std::size_t>(l)];
    const RowMatrix<Scalar> h = layer_norm_rows(x, params_, p + "ln1");
    const RowMatrix<Scalar> q = affine(h, params_, p + "attn.q");
    keys.middleRows(start, n) = affine(h, params_, p + "attn.k");
    values.middleRows(start, n) = affine(h, params_, p + "attn.v");
    RowMatrix<Scalar> attn(n, c.hidden);
    for (Index hd = 0; hd < c.heads; ++hd) {
      RowMatrix<Scalar> scores =
          (q.middleCols(hd * dh, dh) * keys.block(0, hd * dh, end, dh).transpose()) * inv_sqrt;
      for (Index i = 0; i < n; ++i) {
        const Index visible = start + i + 1;
        auto row = scores.row(i);
        const Scalar mx = row.head(visible).maxCoeff();
        row.head(visible) = (row.head(visible).array() - mx).exp().matrix();
        row.head(visible) /= row.head(visible).sum();
        row.tail(end - visible).setZero();
      }
      attn.middleCols(hd * dh, dh) = scores * values.block(0, hd * dh, end, dh);
    }
    x += affine(attn, params_, p + "attn.o");
    const RowMatrix<Scalar> h2 = layer_norm_rows(x, params_, p + "ln2");
    RowMatrix<Scalar> fc = affine(h2, params_, p + "mlp.fc");
    fc.array() = Scalar(0.5) * fc.array() * (Scalar(1) + (c0 * (fc.array() + k0 * fc.array().cube())).tanh());
    x += affine(fc, params_, p + "mlp.proj");
  }
  length_ = end;
  const RowMatrix<Scalar> last = layer_norm_rows(RowMatrix<Scalar>(x.bottomRows(1)), params_, "ln_f");
  return (last * weight(params_, "lm_head.weight")).transpose();
}

template <typename Scalar>
Vector<Scalar> DecoderSession<Scalar>::feed_token(TokenId token) {
  const auto& c = params_.config;
  if (token < 0 || token >= c.vocab) throw std::out_of_range("feed_token: id out of range");
  RowMatrix<Scalar> row = weight(params_, "tok_embed").row(token) + weight(params_, "pos_table").row(length_);
  return feed(row);
}

template <typename Scalar>
GenerateResult generate(const WordImage& image, const ModelParams<Scalar>& params, Index max_new) {
  NoGradScope<Scalar> no_grad;
  const auto& c = params.config;
  const Index n_img = c.n_image_tokens();
  const Tensor<Scalar> embeds = patch_embed(image, params);

  RowMatrix<Scalar> prefix(n_img + 1, c.hidden);
  prefix.topRows(n_img) = embeds.matrix();
  prefix.row(n_img) = weight(params, "tok_embed").row(text::kBos) + weight(params, "pos_table").row(n_img);

  DecoderSession<Scalar> session(params);
  Vector<Scalar> logits = session.feed(prefix);

  GenerateResult result;
  result.tokens.framed = true;
  result.tokens.ids.push_back(text::kBos);
  const Index budget = std::min(std::max<Index>(max_new, 0), c.text_budget());
  for (Index step = 0; step < budget; ++step) {
    Index best = 0;
    for (Index i = 1; i < logits.size(); ++i) {
      if (logits[i] > logits[best]) best = i;
    }
    const auto next = static_cast<TokenId>(best);
    result.tokens.ids.push_back(next);
    if (next == text::kEos) return result;
    if (step + 1 < budget) logits = session.feed_token(next);
  }
  result.tokens.ids.push_back(text::kEos);
  result.truncated = true;
  return result;
}

#define GRADET_INSTANTIATE_MODEL(S)                                                                             \
  template struct ModelParams<S>;                                                                               \
  template class DecoderSession<S>;                                                                             \
  template Tensor<S> extract_patches<S>(const WordImage&, const ModelConfig&);                                  \
  template Tensor<S> patch_embed<S>(const WordImage&, const ModelParams<S>&);                                   \
  template Tensor<S> forward<S>(const Tensor<S>&, std::span<const TokenId>, const ModelParams<S>&,              \
                                const ForwardOptions&);                                                         \
  template Tensor<S> loss<S>(const WordImage&, std::span<const TokenId>, const ModelParams<S>&,                 \
                             const ForwardOptions&);                                                            \
  template GenerateResult generate<S>(const WordImage&, const ModelParams<S>&, Index);                          \
  template Vector<S> softmax_vector<S>(const Vector<S>&);

GRADET_INSTANTIATE_MODEL(float)
GRADET_INSTANTIATE_MODEL(double)

}  // namespace gradet
