#include "gradet/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include "gradet/ops.hpp"
#include "gradet/unicode.hpp"

namespace gradet {

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::PretrainLine: return "pretrain_line";
    case Stage::PretrainWord: return "pretrain_word";
    case Stage::Finetune: return "finetune";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  if (name == "pretrain_line") return Stage::PretrainLine;
  if (name == "pretrain_word") return Stage::PretrainWord;
  if (name == "finetune") return Stage::Finetune;
  throw UsageError("unknown stage '" + std::string(name) + "' (expected pretrain_line, pretrain_word or finetune)");
}

double default_lr(Stage stage) { return stage == Stage::Finetune ? 5e-6 : 1e-4; }

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (effective_lr() <= 0.0) throw std::invalid_argument("train config: lr must be > 0");
  if (epochs < 0) throw std::invalid_argument("train config: epochs must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("train config: dropout must be in [0, 1)");
  if (clip_norm <= 0.0) throw std::invalid_argument("train config: clip_norm must be > 0");
  if (train_manifest.empty()) throw std::invalid_argument("train config: train_manifest is required");
  if (checkpoint_dir.empty()) throw std::invalid_argument("train config: checkpoint_dir is required");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = {{"stage", to_string(c.stage)},
                      {"batch_size", c.batch_size},
                      {"lr", c.effective_lr()},
                      {"epochs", c.epochs},
                      {"seed", c.seed},
                      {"train_manifest", c.train_manifest.string()},
                      {"eval_manifest", c.eval_manifest.string()},
                      {"eval_every", c.eval_every},
                      {"checkpoint_dir", c.checkpoint_dir.string()},
                      {"dropout", c.dropout},
                      {"clip_norm", c.clip_norm},
                      {"keep_epoch_checkpoints", c.keep_epoch_checkpoints},
                      {"train_eval_every", c.train_eval_every},
                      {"threads", c.threads}};
  j["target_train_cer"] = c.target_train_cer ? nlohmann::json(*c.target_train_cer) : nlohmann::json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  static const std::set<std::string> known = {
      "stage",   "batch_size", "lr",        "epochs",    "seed",  "train_manifest", "eval_manifest",
      "eval_every", "checkpoint_dir", "dropout", "clip_norm", "keep_epoch_checkpoints", "target_train_cer",
      "train_eval_every", "threads"};
  if (!j.is_object()) throw FormatError("train config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw FormatError("train config: unknown key '" + key + "'");
  }
  try {
    if (j.contains("stage")) c.stage = parse_stage(j["stage"].get<std::string>());
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<Index>();
    if (j.contains("lr") && !j["lr"].is_null()) c.lr = j["lr"].get<double>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("train_manifest")) c.train_manifest = j["train_manifest"].get<std::string>();
    if (j.contains("eval_manifest")) c.eval_manifest = j["eval_manifest"].get<std::string>();
    if (j.contains("eval_every")) c.eval_every = j["eval_every"].get<std::int64_t>();
    if (j.contains("checkpoint_dir")) c.checkpoint_dir = j["checkpoint_dir"].get<std::string>();
    if (j.contains("dropout")) c.dropout = j["dropout"].get<double>();
    if (j.contains("clip_norm")) c.clip_norm = j["clip_norm"].get<double>();
    if (j.contains("keep_epoch_checkpoints")) c.keep_epoch_checkpoints = j["keep_epoch_checkpoints"].get<bool>();
    if (j.contains("target_train_cer") && !j["target_train_cer"].is_null()) {
      c.target_train_cer = j["target_train_cer"].get<double>();
    }
    if (j.contains("train_eval_every")) c.train_eval_every = j["train_eval_every"].get<int>();
    if (j.contains("threads")) c.threads = j["threads"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  return c;
}

WordImage prepare_image(const std::filesystem::path& path, const ModelConfig& config) {
  return resize_bilinear(load_word_image(path.string()), config.image_height, config.image_width);
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = n;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

void check_images_exist(std::span<const synth::ManifestEntry> entries) {
  std::vector<std::string> missing;
  for (const auto& e : entries) {
    if (!std::filesystem::exists(e.resolved)) missing.push_back(e.resolved.string());
  }
  if (missing.empty()) return;
  std::string msg = std::to_string(missing.size()) + " manifest image(s) missing:";
  for (const auto& m : missing) msg += "\n  " + m;
  throw FormatError(msg);
}

std::vector<WordImage> load_images(std::span<const synth::ManifestEntry> entries, const ModelConfig& config,
                                   int threads) {
  check_images_exist(entries);
  std::vector<WordImage> images(entries.size());
  parallel_for(entries.size(), threads, [&](std::size_t i) { images[i] = prepare_image(entries[i].resolved, config); });
  return images;
}

struct Example {
  WordImage image;
  std::vector<TokenId> targets;
  std::string text;
};

class JsonlLog {
 public:
  JsonlLog(const std::filesystem::path& path, std::vector<nlohmann::json>& memory)
      : out_(path, std::ios::binary | std::ios::app), memory_(memory) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
  }
  void write(nlohmann::json record) {
    out_ << record.dump() << '\n';
    out_.flush();
    memory_.push_back(std::move(record));
  }

 private:
  std::ofstream out_;
  std::vector<nlohmann::json>& memory_;
};

nlohmann::json rate_or_null(const std::optional<double>& r) { return r ? nlohmann::json(*r) : nlohmann::json(nullptr); }

}  // namespace

std::vector<Transcript> recognize(const ModelParams<Real>& params, const Tokenizer& tokenizer,
                                  std::span<const WordImage> images, int threads) {
  std::vector<Transcript> out(images.size());
  parallel_for(images.size(), threads, [&](std::size_t i) {
    const auto result = generate(images[i], params, params.config.text_budget());
    out[i] = Transcript{images[i].source, tokenizer.decode(result.tokens), result.truncated};
  });
  return out;
}

Evaluation evaluate(const ModelParams<Real>& params, const Tokenizer& tokenizer,
                    std::span<const synth::ManifestEntry> entries, int threads) {
  const auto images = load_images(entries, params.config, threads);
  Evaluation eval;
  eval.hypotheses = recognize(params, tokenizer, images, threads);
  std::vector<metrics::Sample> samples;
  samples.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    samples.push_back({entries[i].image, entries[i].text, eval.hypotheses[i].text});
  }
  eval.report = metrics::aggregate(std::span<const metrics::Sample>(samples));
  return eval;
}

Evaluation evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest, int threads) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const auto tokenizer = ckpt.tokenizer();
  const auto entries = synth::read_manifest(manifest);
  return evaluate(ckpt.params, *tokenizer, entries, threads);
}

StageResult run_stage(const TrainConfig& config, StageInputs inputs) {
  config.validate();
  namespace fs = std::filesystem;
  using Clock = std::chrono::steady_clock;

  if (config.stage == Stage::Finetune && !inputs.init) {
    throw std::invalid_argument("finetune stage requires an input checkpoint");
  }

  // Parameters, tokenizer and optimizer state.
  std::shared_ptr<const Tokenizer> tokenizer;
  ModelParams<Real> params;
  AdamState<Real> adam;
  std::int64_t start_epoch = 0;
  std::int64_t step = 0;
  if (inputs.init) {
    tokenizer = inputs.init->tokenizer();
    params = std::move(inputs.init->params);
    if (inputs.resume && inputs.init->train) {
      if (inputs.init->train->stage != to_string(config.stage)) {
        throw std::invalid_argument("cannot resume: checkpoint was written by stage " + inputs.init->train->stage);
      }
      adam = std::move(inputs.init->train->adam);
      start_epoch = inputs.init->train->epochs_completed;
      step = inputs.init->train->step;
    }
  } else {
    if (!inputs.tokenizer) throw std::invalid_argument("run_stage: a tokenizer is required without a checkpoint");
    tokenizer = inputs.tokenizer;
    ModelConfig model = inputs.model;
    model.vocab = static_cast<Index>(tokenizer->size());
    params = ModelParams<Real>::init(model, inputs.init_seed);
  }
  for (auto& [name, t] : params.tensors) t.set_requires_grad(true);
  if (params.config.vocab != static_cast<Index>(tokenizer->size())) {
    throw FormatError("tokenizer size " + std::to_string(tokenizer->size()) + " does not match model vocab " +
                      std::to_string(params.config.vocab));
  }
  const ModelConfig& model = params.config;

  // Data.
  const auto entries = synth::read_manifest(config.train_manifest);
  if (entries.empty()) throw std::invalid_argument("empty stage: " + config.train_manifest.string() + " has no samples");
  const auto images = load_images(entries, model, config.threads);
  std::vector<Example> examples;
  std::size_t skipped_empty = 0, skipped_long = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto seq = tokenizer->encode(entries[i].text, false);
    if (seq.ids.empty()) {
      ++skipped_empty;
      continue;
    }
    if (static_cast<Index>(seq.ids.size()) > model.text_budget()) {
      ++skipped_long;
      continue;
    }
    examples.push_back(Example{images[i], std::move(seq.ids), entries[i].text});
  }
  if (skipped_empty > 0 || skipped_long > 0) {
    std::cerr << "warning: skipped " << skipped_empty << " label(s) with zero tokens and " << skipped_long
              << " label(s) longer than the text budget\n";
  }
  const auto batch = static_cast<std::size_t>(config.batch_size);
  if (examples.size() < batch) {
    throw std::invalid_argument("empty stage: " + std::to_string(examples.size()) +
                                " usable samples, fewer than one batch of " + std::to_string(batch));
  }
  std::vector<synth::ManifestEntry> eval_entries;
  if (!config.eval_manifest.empty()) eval_entries = synth::read_manifest(config.eval_manifest);
  std::vector<synth::ManifestEntry> train_entries;
  for (const auto& e : entries) train_entries.push_back(e);

  fs::create_directories(config.checkpoint_dir);
  StageResult result;
  result.log_path = config.checkpoint_dir / "train_log.jsonl";
  JsonlLog log(result.log_path, result.log);
  std::ofstream timing(config.checkpoint_dir / "timing.jsonl", std::ios::binary | std::ios::app);
  if (start_epoch == 0 && step == 0) {
    log.write({{"type", "config"}, {"train", to_json(config)}, {"model", to_json(model)},
               {"tokenizer", to_string(tokenizer->kind())}, {"parameters", params.count()},
               {"samples", examples.size()}, {"skipped_empty", skipped_empty}, {"skipped_long", skipped_long}});
  }

  auto save = [&](const fs::path& path, std::int64_t epochs_done) {
    Checkpoint ckpt;
    ckpt.params = params;
    ckpt.tokenizer_kind = tokenizer->kind();
    ckpt.tokenizer_data = tokenizer->serialize();
    ckpt.train = TrainState{std::string(to_string(config.stage)), epochs_done, step, adam};
    save_checkpoint(path, ckpt);
  };
  std::int64_t last_eval_step = -1;
  auto run_eval = [&](std::int64_t epoch) {
    if (eval_entries.empty() || step == last_eval_step) return;
    last_eval_step = step;
    auto eval = evaluate(params, *tokenizer, eval_entries, config.threads);
    log.write({{"type", "eval"}, {"epoch", epoch}, {"step", step}, {"split", "eval"},
               {"cer", rate_or_null(eval.report.cer())}, {"wer", rate_or_null(eval.report.wer())}});
    result.last_eval = std::move(eval.report);
  };

  const AdamOptions adam_opts{config.effective_lr(), 0.9, 0.999, 1e-8};
  const std::size_t steps_per_epoch = examples.size() / batch;
  std::int64_t epoch = start_epoch;
  bool stopped_early = false;
  for (; epoch < config.epochs && !stopped_early; ++epoch) {
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(config.seed, {static_cast<std::uint64_t>(epoch), 0x5348u}));
    shuffle_rng.shuffle(order.begin(), order.end());

    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const auto t0 = Clock::now();
      zero_grad(params.tensors);
      std::size_t total_targets = 0;
      for (std::size_t k = 0; k < batch; ++k) total_targets += examples[order[b * batch + k]].targets.size() + 1;
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < batch; ++k) {
        const Example& ex = examples[order[b * batch + k]];
        const Real weight = static_cast<Real>(ex.targets.size() + 1) / static_cast<Real>(total_targets);
        Rng dropout_rng(derive_seed(config.seed, {static_cast<std::uint64_t>(step), k, 0x4452u}));
        Tape<Real> tape;
        TapeScope<Real> scope(tape);
        const Tensor<Real> sample_loss =
            loss(ex.image, std::span<const TokenId>(ex.targets), params, ForwardOptions{config.dropout, &dropout_rng});
        tape.backward(scale(sample_loss, weight));
        batch_loss += static_cast<double>(sample_loss.item()) * static_cast<double>(weight);
      }
      const double norm = clip_grad_norm(params.tensors, config.clip_norm);
      adam_step(params.tensors, adam, adam_opts);
      ++step;
      epoch_loss += batch_loss;
      log.write({{"type", "step"}, {"epoch", epoch}, {"step", step}, {"loss", batch_loss}, {"grad_norm", norm}});
      timing << nlohmann::json{{"step", step}, {"seconds", std::chrono::duration<double>(Clock::now() - t0).count()}}.dump()
             << '\n';
      if (config.eval_every > 0 && step % config.eval_every == 0) run_eval(epoch);
    }
    const double mean_loss = epoch_loss / static_cast<double>(steps_per_epoch);
    log.write({{"type", "epoch"}, {"epoch", epoch}, {"step", step}, {"mean_loss", mean_loss}});

    if (config.target_train_cer && config.train_eval_every > 0 && (epoch + 1) % config.train_eval_every == 0) {
      const auto eval = evaluate(params, *tokenizer, train_entries, config.threads);
      result.last_train_cer = eval.report.cer();
      log.write({{"type", "eval"}, {"epoch", epoch}, {"step", step}, {"split", "train"},
                 {"cer", rate_or_null(eval.report.cer())}, {"wer", rate_or_null(eval.report.wer())}});
      if (eval.report.cer() && *eval.report.cer() <= *config.target_train_cer) stopped_early = true;
    }
    save(config.checkpoint_dir / "last.ckpt", epoch + 1);
    if (config.keep_epoch_checkpoints) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch-%03lld.ckpt", static_cast<long long>(epoch + 1));
      save(config.checkpoint_dir / name, epoch + 1);
    }
  }
  // Epoch fields are 0-based indices of the epoch the record belongs to.
  run_eval(std::max<std::int64_t>(epoch - 1, 0));
  result.checkpoint = config.checkpoint_dir / "final.ckpt";
  save(result.checkpoint, epoch);
  result.epochs_completed = epoch;
  result.steps = step;
  return result;
}

nlohmann::json BenchReport::to_json() const {
  nlohmann::json runs_json = nlohmann::json::array();
  for (const auto& r : runs) runs_json.push_back({{"seconds", r.seconds}, {"words_per_second", r.words_per_second}});
  return {{"repeats", runs.size()},           {"n_samples", n_samples},
          {"n_words", n_words},               {"parameters", parameters},
          {"runs", std::move(runs_json)},     {"mean_seconds", mean_seconds},
          {"mean_words_per_second", mean_words_per_second}};
}

BenchReport bench(const ModelParams<Real>& params, const Tokenizer& tokenizer,
                  std::span<const synth::ManifestEntry> entries, int repeats) {
  if (repeats < 1) throw std::invalid_argument("bench: repeats must be >= 1");
  if (entries.empty()) throw std::invalid_argument("bench: manifest has no samples");
  check_images_exist(entries);
  BenchReport report;
  report.n_samples = entries.size();
  report.parameters = params.count();
  for (const auto& e : entries) report.n_words += unicode::split_words(unicode::to_u32(e.text)).size();
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& e : entries) {
      const WordImage image = prepare_image(e.resolved, params.config);
      const auto result = generate(image, params, params.config.text_budget());
      static_cast<void>(tokenizer.decode(result.tokens));
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.runs.push_back({seconds, static_cast<double>(report.n_words) / seconds});
  }
  for (const auto& r : report.runs) {
    report.mean_seconds += r.seconds / static_cast<double>(repeats);
    report.mean_words_per_second += r.words_per_second / static_cast<double>(repeats);
  }
  return report;
}

BenchReport bench(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest, int repeats) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const auto tokenizer = ckpt.tokenizer();
  const auto entries = synth::read_manifest(manifest);
  return bench(ckpt.params, *tokenizer, entries, repeats);
}

}  // namespace gradet
