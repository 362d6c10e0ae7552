#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gradet/checkpoint.hpp"
#include "gradet/metrics.hpp"
#include "gradet/model.hpp"
#include "gradet/synthgen.hpp"
#include "gradet/tokenizer.hpp"

namespace gradet {

enum class Stage { PretrainLine, PretrainWord, Finetune };

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view name);

/// Learning rates from the full-scale recipe: 1e-4 while pretraining, 5e-6 for fine-tuning.
double default_lr(Stage stage);

struct TrainConfig {
  Stage stage = Stage::PretrainWord;
  Index batch_size = 32;
  std::optional<double> lr;  // stage default when unset
  int epochs = 1;
  std::uint64_t seed = 0;
  std::filesystem::path train_manifest;
  std::filesystem::path eval_manifest;  // optional held-out set
  std::int64_t eval_every = 0;          // steps; 0 evaluates only when the stage ends
  std::filesystem::path checkpoint_dir;
  double dropout = 0.1;
  double clip_norm = 1.0;
  bool keep_epoch_checkpoints = false;
  /// Stop early once training-set CER reaches this value; checked every
  /// `train_eval_every` epochs when both are set.
  std::optional<double> target_train_cer;
  int train_eval_every = 0;
  int threads = 1;  // evaluation only; the optimizer step is serial

  double effective_lr() const { return lr.value_or(default_lr(stage)); }
  /// Throws std::invalid_argument on nonsensical values.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
/// Missing keys keep the values in `base`; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct StageInputs {
  /// Parameters and tokenizer to start from. Required for fine-tuning.
  std::optional<Checkpoint> init;
  /// Continue the optimizer state and epoch count stored in `init`.
  bool resume = false;
  /// Used when `init` is empty; the vocab size is taken from the tokenizer.
  ModelConfig model;
  std::shared_ptr<const Tokenizer> tokenizer;
  std::uint64_t init_seed = 0;
};

struct StageResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log_path;
  std::vector<nlohmann::json> log;
  std::int64_t epochs_completed = 0;
  std::int64_t steps = 0;
  std::optional<metrics::EvalReport> last_eval;
  std::optional<double> last_train_cer;
};

/// Trains for `config.epochs` epochs with deterministic per-(seed, epoch) shuffling,
/// drop-last batching, gradient clipping and Adam. Writes last.ckpt at every epoch
/// boundary, final.ckpt at the end, and an append-only JSONL log.
StageResult run_stage(const TrainConfig& config, StageInputs inputs);

/// Model-ready image: loaded from PGM and resized to the configured (H, W).
WordImage prepare_image(const std::filesystem::path& path, const ModelConfig& config);

struct Transcript {
  std::string source;
  std::string text;
  bool truncated = false;
};

std::vector<Transcript> recognize(const ModelParams<Real>& params, const Tokenizer& tokenizer,
                                  std::span<const WordImage> images, int threads = 1);

struct Evaluation {
  metrics::EvalReport report;
  std::vector<Transcript> hypotheses;
};

Evaluation evaluate(const ModelParams<Real>& params, const Tokenizer& tokenizer,
                    std::span<const synth::ManifestEntry> entries, int threads = 1);
Evaluation evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest, int threads = 1);

struct BenchRun {
  double seconds = 0.0;
  double words_per_second = 0.0;
};

struct BenchReport {
  std::size_t n_samples = 0;
  std::size_t n_words = 0;
  std::vector<BenchRun> runs;
  double mean_words_per_second = 0.0;
  double mean_seconds = 0.0;
  Index parameters = 0;

  nlohmann::json to_json() const;
};

/// Times full recognition (load, resize, decode) over the manifest `repeats` times.
/// Words are whitespace-separated tokens of the reference labels.
BenchReport bench(const ModelParams<Real>& params, const Tokenizer& tokenizer,
                  std::span<const synth::ManifestEntry> entries, int repeats);
BenchReport bench(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest, int repeats);

}  // namespace gradet
