#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "gradet/trainer.hpp"

using namespace gradet;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path root;
  fs::path manifest;
  std::shared_ptr<const Tokenizer> tokenizer;
  ModelConfig model;

  Fixture() : root(fs::temp_directory_path() / ("gradet_trainer_" + std::to_string(::getpid()))) {
    fs::remove_all(root);
    const auto words = synth::pseudo_words(6, 3);
    const auto vocab = text::build_vocab(words, 1);
    const auto atlas = synth::build_atlas(vocab, 9);
    manifest = synth::gen_dataset(words, atlas, 8, {}, 5, root / "data");
    tokenizer = make_grapheme_tokenizer(vocab);
    model.hidden = 16;
    model.layers = 1;
    model.heads = 2;
    model.max_seq = 136;
  }
  ~Fixture() { fs::remove_all(root); }

  TrainConfig config(const std::string& dir, int epochs) const {
    TrainConfig c;
    c.train_manifest = manifest;
    c.eval_manifest = manifest;
    c.checkpoint_dir = root / dir;
    c.batch_size = 4;
    c.epochs = epochs;
    c.lr = 1e-3;
    c.seed = 11;
    c.dropout = 0.1;
    return c;
  }
  StageInputs inputs() const {
    StageInputs in;
    in.model = model;
    in.tokenizer = tokenizer;
    in.init_seed = 2;
    return in;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void check_same_params(const ModelParams<Real>& a, const ModelParams<Real>& b) {
  REQUIRE(a.tensors.size() == b.tensors.size());
  for (const auto& [name, t] : a.tensors) {
    INFO(name);
    CHECK(t.value() == b.at(name).value());
  }
}

}  // namespace

TEST_CASE("train config: validation and json") {
  TrainConfig c;
  c.train_manifest = "m.jsonl";
  c.checkpoint_dir = "out";
  CHECK_NOTHROW(c.validate());
  CHECK(c.effective_lr() == 1e-4);
  c.stage = Stage::Finetune;
  CHECK(c.effective_lr() == 5e-6);
  const auto back = train_config_from_json(to_json(c));
  CHECK(back.stage == Stage::Finetune);
  CHECK(back.batch_size == c.batch_size);
  CHECK_THROWS_AS(train_config_from_json({{"bogus", 1}}), FormatError);
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK_THROWS_AS(parse_stage("pretrain"), UsageError);
  CHECK(parse_stage("pretrain_line") == Stage::PretrainLine);
}

TEST_CASE("training is deterministic and resumable") {
  Fixture f;
  auto cfg = f.config("a", 2);
  const auto first = run_stage(cfg, f.inputs());
  CHECK(first.epochs_completed == 2);
  CHECK(first.steps == 4);
  REQUIRE(first.last_eval);
  const std::string log_a = slurp(first.log_path);
  CHECK(fs::exists(cfg.checkpoint_dir / "final.ckpt"));
  CHECK(fs::exists(cfg.checkpoint_dir / "last.ckpt"));
  CHECK(fs::exists(cfg.checkpoint_dir / "timing.jsonl"));
  const auto params_a = load_checkpoint(first.checkpoint).params;

  // Same seed, same directory: the log is byte-identical.
  fs::remove_all(cfg.checkpoint_dir);
  const auto second = run_stage(cfg, f.inputs());
  CHECK(slurp(second.log_path) == log_a);
  check_same_params(load_checkpoint(second.checkpoint).params, params_a);

  // One epoch, then resume to two, matches the uninterrupted run.
  const auto half = run_stage(f.config("b", 1), f.inputs());
  StageInputs resumed = f.inputs();
  resumed.init = load_checkpoint(half.checkpoint);
  resumed.resume = true;
  const auto rest = run_stage(f.config("b", 2), std::move(resumed));
  CHECK(rest.epochs_completed == 2);
  CHECK(rest.steps == 4);
  check_same_params(load_checkpoint(rest.checkpoint).params, params_a);

  // A different seed changes the trajectory.
  auto other = f.config("c", 1);
  other.seed = 12;
  const auto c = run_stage(other, f.inputs());
  CHECK(load_checkpoint(c.checkpoint).params.at("tok_embed").value() !=
        load_checkpoint(half.checkpoint).params.at("tok_embed").value());
}

TEST_CASE("training rejects empty stages and missing inputs") {
  Fixture f;
  auto cfg = f.config("e", 1);
  cfg.stage = Stage::Finetune;
  CHECK_THROWS_AS(run_stage(cfg, f.inputs()), std::invalid_argument);

  cfg = f.config("e", 1);
  cfg.batch_size = 9;
  CHECK_THROWS_AS(run_stage(cfg, f.inputs()), std::invalid_argument);

  const auto empty = f.root / "empty.jsonl";
  std::ofstream(empty).close();
  cfg = f.config("e", 1);
  cfg.train_manifest = empty;
  CHECK_THROWS_AS(run_stage(cfg, f.inputs()), std::invalid_argument);

  // A manifest pointing at missing images fails before training starts.
  const auto broken = f.root / "broken.jsonl";
  std::ofstream(broken) << R"({"image": "nope.pgm", "text": "x", "tags": [], "seed": 0})" << "\n";
  cfg.train_manifest = broken;
  CHECK_THROWS_AS(run_stage(cfg, f.inputs()), FormatError);
}

TEST_CASE("recognize, evaluate and bench") {
  Fixture f;
  const auto params = ModelParams<Real>::init([&] {
    ModelConfig m = f.model;
    m.vocab = static_cast<Index>(f.tokenizer->size());
    return m;
  }(), 1);
  const auto entries = synth::read_manifest(f.manifest);
  const auto serial = evaluate(params, *f.tokenizer, entries, 1);
  const auto threaded = evaluate(params, *f.tokenizer, entries, 3);
  REQUIRE(serial.hypotheses.size() == entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    CHECK(serial.hypotheses[i].text == threaded.hypotheses[i].text);
    CHECK(serial.hypotheses[i].source == entries[i].resolved.string());
  }
  CHECK(serial.report.per_sample.size() == entries.size());

  const auto report = bench(params, *f.tokenizer, entries, 3);
  CHECK(report.runs.size() == 3);
  CHECK(report.n_samples == entries.size());
  CHECK(report.n_words == entries.size());
  CHECK(report.mean_words_per_second > 0.0);
  const auto j = report.to_json();
  for (const char* key : {"repeats", "n_samples", "n_words", "parameters", "runs", "mean_seconds",
                          "mean_words_per_second"})
    CHECK(j.contains(key));
  CHECK_THROWS_AS(bench(params, *f.tokenizer, entries, 0), std::invalid_argument);
  CHECK_THROWS_AS(bench(params, *f.tokenizer, {}, 1), std::invalid_argument);
}
