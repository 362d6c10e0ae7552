// gradet: command-line front end for vocab building, synthetic data, training and recognition.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gradet/bpe.hpp"
#include "gradet/checkpoint.hpp"
#include "gradet/metrics.hpp"
#include "gradet/model.hpp"
#include "gradet/synthgen.hpp"
#include "gradet/textcore.hpp"
#include "gradet/tokenizer.hpp"
#include "gradet/trainer.hpp"
#include "gradet/unicode.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gradet::cli {
namespace {

// Reads --config files as flat JSON objects. Keys use the long option names with
// underscores or dashes; a nested "model" object is flattened into the same namespace.
// Items are routed to whichever subcommand was selected on the command line.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames().front();
      if (opt->count() > 0) {
        j[name] = opt->results().size() == 1 ? json(opt->results().front()) : json(opt->results());
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, items);
    const auto selected = root_->get_subcommands();
    if (!selected.empty()) {
      for (auto& item : items) item.parents = {selected.front()->get_name()};
    }
    return items;
  }

 private:
  const CLI::App* root_;

  static void flatten(const json& object, std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : object.items()) {
      if (value.is_object()) {
        flatten(value, items);
        continue;
      }
      if (value.is_null()) continue;
      CLI::ConfigItem item;
      item.name = key;
      std::replace(item.name.begin(), item.name.end(), '_', '-');
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }

  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }
};

struct Common {
  std::uint64_t seed = 0;
  bool json_output = false;
  int threads = 1;
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--seed", common.seed, "Random seed")->capture_default_str();
  cmd->add_flag("--json", common.json_output, "Emit one JSON document on stdout");
  cmd->add_option("--threads", common.threads, "Worker threads for parallel sections")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

const std::vector<std::string> kTokenizerNames = {"grapheme", "bpe", "char"};

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!unicode::is_valid_utf8(line)) {
      throw FormatError(path.string() + ":" + std::to_string(lines.size() + 1) + ": invalid UTF-8");
    }
    line = unicode::nfc(line);
    if (!line.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

std::vector<std::string> read_corpora(const std::vector<std::string>& paths) {
  std::vector<std::string> corpus;
  for (const auto& p : paths) {
    auto lines = read_lines(p);
    corpus.insert(corpus.end(), std::make_move_iterator(lines.begin()), std::make_move_iterator(lines.end()));
  }
  return corpus;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

void emit(const Common& common, const json& document, const std::string& text) {
  if (common.json_output) {
    std::cout << document.dump(2) << '\n';
  } else {
    std::cout << text;
  }
}

struct ModelFlags {
  ModelConfig config;

  void add(CLI::App* cmd) {
    cmd->add_option("--image-height", config.image_height)->capture_default_str();
    cmd->add_option("--image-width", config.image_width)->capture_default_str();
    cmd->add_option("--patch-height", config.patch_height)->capture_default_str();
    cmd->add_option("--patch-width", config.patch_width)->capture_default_str();
    cmd->add_option("--hidden", config.hidden)->capture_default_str();
    cmd->add_option("--layers", config.layers)->capture_default_str();
    cmd->add_option("--heads", config.heads)->capture_default_str();
    cmd->add_option("--max-seq", config.max_seq)->capture_default_str();
  }
};

int run_build_vocab(const Common& common, const std::vector<std::string>& corpus_paths, const std::string& out,
                    std::size_t min_count, const std::string& mode) {
  const auto corpus = read_corpora(corpus_paths);
  const auto seg = mode == "char" ? text::Segmentation::Character : text::Segmentation::Grapheme;
  const auto vocab = text::build_vocab(corpus, min_count, seg);
  text::save_vocab(out, vocab);
  emit(common, {{"vocab", out}, {"size", vocab.size()}, {"units", vocab.grapheme_count()}, {"mode", mode}},
       out + ": " + std::to_string(vocab.size()) + " tokens (" + std::to_string(vocab.grapheme_count()) +
           " units + 4 specials)\n");
  return 0;
}

int run_bpe_train(const Common& common, const std::vector<std::string>& corpus_paths, const std::string& out,
                  std::size_t target_vocab, const std::string& match_vocab) {
  if (!match_vocab.empty()) target_vocab = text::load_vocab(match_vocab).size();
  if (target_vocab == 0) throw UsageError("bpe-train needs --target-vocab or --match-vocab");
  const auto corpus = read_corpora(corpus_paths);
  const auto model = bpe::bpe_train(corpus, target_vocab);
  std::ofstream file(out, std::ios::binary);
  if (!file) throw std::runtime_error("cannot write " + out);
  bpe::write_model(file, model);
  emit(common,
       {{"model", out}, {"size", model.size()}, {"base", model.base_alphabet().size()}, {"merges", model.merges().size()}},
       out + ": " + std::to_string(model.size()) + " tokens, " + std::to_string(model.merges().size()) + " merges\n");
  return 0;
}

int run_tokenize(const Common& common, const std::string& kind, const std::string& vocab_path,
                 std::optional<std::string> text, bool from_stdin, bool frame) {
  const auto tokenizer = load_tokenizer(parse_tokenizer_kind(kind), vocab_path);
  std::string input;
  if (from_stdin) {
    std::ostringstream buffer;
    buffer << std::cin.rdbuf();
    input = buffer.str();
  } else if (text) {
    input = *text;
  } else {
    throw UsageError("tokenize needs --text or --stdin");
  }
  if (!unicode::is_valid_utf8(input)) throw FormatError("input is not valid UTF-8");
  input = unicode::nfc(input);
  // A single trailing newline from stdin is a line terminator, not content.
  if (from_stdin && !input.empty() && input.back() == '\n') {
    input.pop_back();
    if (!input.empty() && input.back() == '\r') input.pop_back();
  }
  const auto seq = tokenizer->encode(input, frame);
  json tokens = json::array();
  std::string listing;
  for (const TokenId id : seq.ids) {
    const std::string surface = tokenizer->surface(id);
    tokens.push_back({{"id", id}, {"surface", surface}});
    listing += std::to_string(id) + '\t' + surface + '\n';
  }
  emit(common, {{"tokenizer", kind}, {"tokens", tokens}}, listing);
  return 0;
}

struct GenSynthFlags {
  std::vector<std::string> corpus;
  std::size_t pseudo_words = 0;
  std::string vocab;
  std::uint64_t atlas_seed = 0;
  std::string mode = "word";
  std::vector<std::string> distort;
  std::size_t n = 0;
  std::string out;
  std::string words_out;
};

int run_gen_synth(const Common& common, const GenSynthFlags& f) {
  std::vector<std::string> words;
  if (!f.corpus.empty()) {
    words = read_corpora(f.corpus);
  } else if (f.pseudo_words > 0) {
    words = synth::pseudo_words(f.pseudo_words, common.seed);
  } else {
    throw UsageError("gen-synth needs --corpus or --pseudo-words");
  }
  if (words.empty()) throw FormatError("gen-synth: the word source is empty");
  if (!f.words_out.empty()) write_lines(f.words_out, words);

  const text::GraphemeVocab vocab = f.vocab.empty() ? text::build_vocab(words, 1) : text::load_vocab(f.vocab);
  const auto atlas = synth::build_atlas(vocab, f.atlas_seed);

  synth::DatasetOptions opts;
  opts.mode = f.mode == "line" ? synth::SampleMode::Line : synth::SampleMode::Word;
  opts.render = f.mode == "line" ? synth::RenderOptions::line() : synth::RenderOptions::word();
  for (const auto& tag : f.distort) opts.render.enable(tag);
  opts.threads = common.threads;
  const std::size_t n = f.n > 0 ? f.n : words.size();
  const auto manifest = synth::gen_dataset(words, atlas, n, opts, common.seed, f.out);
  emit(common, {{"manifest", manifest.string()}, {"samples", n}, {"atlas_glyphs", atlas.size()}},
       manifest.string() + ": " + std::to_string(n) + " samples\n");
  return 0;
}

struct TrainFlags {
  TrainConfig train;
  std::string stage = "pretrain_word";
  std::optional<double> lr;
  std::optional<double> target_train_cer;
  std::string train_manifest, eval_manifest, checkpoint_dir;
  std::string init;
  bool resume = false;
  std::string tokenizer = "grapheme";
  std::string vocab;
  std::optional<std::uint64_t> init_seed;
  ModelFlags model;
};

int run_train(const Common& common, TrainFlags f) {
  TrainConfig config = f.train;
  config.stage = parse_stage(f.stage);
  config.lr = f.lr;
  config.target_train_cer = f.target_train_cer;
  config.seed = common.seed;
  config.threads = common.threads;
  config.train_manifest = f.train_manifest;
  config.eval_manifest = f.eval_manifest;
  config.checkpoint_dir = f.checkpoint_dir;

  StageInputs inputs;
  inputs.resume = f.resume;
  if (!f.init.empty()) {
    inputs.init = load_checkpoint(f.init);
  } else {
    if (f.vocab.empty()) throw UsageError("train needs --vocab (or --init to start from a checkpoint)");
    inputs.tokenizer = load_tokenizer(parse_tokenizer_kind(f.tokenizer), f.vocab);
    inputs.model = f.model.config;
    inputs.init_seed = f.init_seed.value_or(common.seed);
  }
  const StageResult result = run_stage(config, std::move(inputs));
  json doc = {{"checkpoint", result.checkpoint.string()},
              {"log", result.log_path.string()},
              {"epochs_completed", result.epochs_completed},
              {"steps", result.steps}};
  std::string text = "checkpoint: " + result.checkpoint.string() + "\nlog: " + result.log_path.string() + "\n";
  if (result.last_eval) {
    doc["eval"] = result.last_eval->to_json();
    doc["eval"].erase("per_sample");
  }
  emit(common, doc, text);
  return 0;
}

json hypothesis_record(const Transcript& t, const std::optional<std::string>& reference) {
  json j = {{"image", t.source}, {"hypothesis", t.text}, {"truncated", t.truncated}};
  j["reference"] = reference ? json(*reference) : json(nullptr);
  return j;
}

std::string format_rate(const std::optional<double>& r) {
  if (!r) return "undefined";
  std::ostringstream s;
  s.precision(2);
  s << std::fixed << 100.0 * *r << "%";
  return s.str();
}

int run_eval(const Common& common, const std::string& checkpoint, const std::string& manifest,
             const std::string& hypotheses, const std::string& out) {
  metrics::EvalReport report;
  if (!hypotheses.empty()) {
    std::ifstream in(hypotheses, std::ios::binary);
    if (!in) throw FormatError("cannot open " + hypotheses);
    std::vector<metrics::Sample> samples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        const json j = json::parse(line);
        if (!j.contains("reference") || j["reference"].is_null()) {
          throw FormatError(hypotheses + ":" + std::to_string(line_no) + ": record has no reference text");
        }
        samples.push_back({j.at("image").get<std::string>(), unicode::nfc(j.at("reference").get<std::string>()),
                           unicode::nfc(j.at("hypothesis").get<std::string>())});
      } catch (const json::exception& e) {
        throw FormatError(hypotheses + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    report = metrics::aggregate(std::span<const metrics::Sample>(samples));
  } else {
    if (checkpoint.empty() || manifest.empty()) throw UsageError("eval needs --checkpoint and --manifest, or --hypotheses");
    report = evaluate(checkpoint, manifest, common.threads).report;
  }
  const json doc = report.to_json();
  if (!out.empty()) {
    std::ofstream file(out, std::ios::binary);
    if (!file) throw std::runtime_error("cannot write " + out);
    file << doc.dump(2) << '\n';
  }
  emit(common, doc,
       "samples: " + std::to_string(report.per_sample.size()) + "\nCER: " + format_rate(report.cer()) +
           "\nWER: " + format_rate(report.wer()) + "\n");
  return 0;
}

int run_recognize(const Common& common, const std::string& checkpoint, const std::vector<std::string>& images,
                  const std::string& manifest, const std::string& out, const std::string& expect_config) {
  std::optional<ModelConfig> expected;
  if (!expect_config.empty()) {
    std::ifstream in(expect_config, std::ios::binary);
    if (!in) throw FormatError("cannot open " + expect_config);
    try {
      json j = json::parse(in);
      if (j.contains("model")) j = j["model"];
      expected = model_config_from_json(j);
    } catch (const json::exception& e) {
      throw FormatError(expect_config + ": " + e.what());
    }
  }
  const Checkpoint ckpt = load_checkpoint(checkpoint, expected);
  const auto tokenizer = ckpt.tokenizer();

  std::vector<WordImage> inputs;
  std::vector<std::optional<std::string>> references;
  if (!manifest.empty()) {
    const auto entries = synth::read_manifest(manifest);
    for (const auto& e : entries) {
      if (!fs::exists(e.resolved)) throw FormatError("missing image " + e.resolved.string());
      inputs.push_back(prepare_image(e.resolved, ckpt.params.config));
      inputs.back().source = e.image;
      references.emplace_back(e.text);
    }
  } else if (!images.empty()) {
    for (const auto& path : images) {
      inputs.push_back(prepare_image(path, ckpt.params.config));
      inputs.back().source = path;
      references.emplace_back();
    }
  } else {
    throw UsageError("recognize needs --image or --manifest");
  }

  const auto transcripts = recognize(ckpt.params, *tokenizer, inputs, common.threads);
  json records = json::array();
  std::string listing;
  for (std::size_t i = 0; i < transcripts.size(); ++i) {
    records.push_back(hypothesis_record(transcripts[i], references[i]));
    listing += transcripts[i].source + '\t' + transcripts[i].text + '\n';
  }
  if (!manifest.empty()) {
    const fs::path path = out.empty() ? fs::path("hypotheses.jsonl") : fs::path(out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot write " + path.string());
    for (const auto& r : records) file << r.dump() << '\n';
    std::cerr << "hypotheses written to " << path.string() << '\n';
  }
  emit(common, records, listing);
  return 0;
}

int run_bench(const Common& common, const std::string& checkpoint, const std::string& manifest, int repeats) {
  const BenchReport report = bench(checkpoint, manifest, repeats);
  std::ostringstream text;
  text.precision(3);
  text << std::fixed;
  for (std::size_t i = 0; i < report.runs.size(); ++i) {
    text << "run " << i + 1 << ": " << report.runs[i].words_per_second << " words/s (" << report.runs[i].seconds
         << " s)\n";
  }
  text << "mean: " << report.mean_words_per_second << " words/s over " << report.n_words << " words, "
       << report.runs.size() << " repeats\n";
  emit(common, report.to_json(), text.str());
  return 0;
}

int run_count_params(const Common& common, ModelConfig config, Index vocab_size, const std::string& kind,
                     const std::string& vocab_path) {
  if (!vocab_path.empty()) {
    config.vocab = static_cast<Index>(load_tokenizer(parse_tokenizer_kind(kind), vocab_path)->size());
  } else {
    config.vocab = vocab_size;
  }
  if (config.vocab <= 0) throw UsageError("count-params needs --vocab-size or --vocab");
  config.validate();
  const Index n = count_params(config);
  json breakdown = json::object();
  for (const auto& [name, shape] : param_shapes(config)) breakdown[name] = numel(shape);
  emit(common, {{"parameters", n}, {"model", to_json(config)}, {"n_image_tokens", config.n_image_tokens()},
                {"tensors", breakdown}},
       std::to_string(n) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradet: grapheme-aware handwritten word recognition"};
  app.require_subcommand(1);
  app.fallthrough();
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "JSON file with option defaults; command-line flags take precedence");
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  Common common;

  // build-vocab
  std::vector<std::string> corpus;
  std::string out;
  std::size_t min_count = 1;
  std::string seg_mode = "grapheme";
  auto* build_vocab = app.add_subcommand("build-vocab", "Build a grapheme (or character) vocabulary from a text corpus");
  add_common(build_vocab, common);
  build_vocab->add_option("--corpus", corpus, "UTF-8 text file(s), one sample per line")->required()->check(CLI::ExistingFile);
  build_vocab->add_option("--out", out, "Vocab file to write")->required();
  build_vocab->add_option("--min-count", min_count)->capture_default_str();
  build_vocab->add_option("--mode", seg_mode)->check(CLI::IsMember({"grapheme", "char"}))->capture_default_str();

  // bpe-train
  std::size_t target_vocab = 0;
  std::string match_vocab;
  auto* bpe_train = app.add_subcommand("bpe-train", "Train a BPE model on a text corpus");
  add_common(bpe_train, common);
  bpe_train->add_option("--corpus", corpus)->required()->check(CLI::ExistingFile);
  bpe_train->add_option("--out", out)->required();
  bpe_train->add_option("--target-vocab", target_vocab, "Total vocabulary size including specials");
  bpe_train->add_option("--match-vocab", match_vocab, "Use the size of this grapheme vocab as the target")
      ->check(CLI::ExistingFile);

  // tokenize
  std::string tokenizer_name = "grapheme";
  std::string vocab_path;
  std::optional<std::string> text_input;
  bool from_stdin = false;
  bool frame = false;
  auto* tokenize = app.add_subcommand("tokenize", "Print the token ids of a text, one per line");
  add_common(tokenize, common);
  tokenize->add_option("--tokenizer", tokenizer_name)->check(CLI::IsMember(kTokenizerNames))->capture_default_str();
  tokenize->add_option("--vocab", vocab_path, "Vocab file (grapheme/char) or BPE model file")
      ->required()
      ->check(CLI::ExistingFile);
  auto* text_opt = tokenize->add_option("--text", text_input);
  auto* stdin_opt = tokenize->add_flag("--stdin", from_stdin, "Read the text from standard input");
  text_opt->excludes(stdin_opt);
  tokenize->add_flag("--frame", frame, "Wrap the sequence in BOS/EOS");

  // gen-synth
  GenSynthFlags synth_flags;
  auto* gen_synth = app.add_subcommand("gen-synth", "Render a synthetic word or line image dataset");
  add_common(gen_synth, common);
  gen_synth->add_option("--corpus", synth_flags.corpus, "Word list(s), one entry per line")->check(CLI::ExistingFile);
  gen_synth->add_option("--pseudo-words", synth_flags.pseudo_words, "Draw this many pseudo-Bengali words instead");
  gen_synth->add_option("--vocab", synth_flags.vocab, "Grapheme vocab defining the glyph atlas")
      ->check(CLI::ExistingFile);
  gen_synth->add_option("--atlas-seed", synth_flags.atlas_seed)->capture_default_str();
  gen_synth->add_option("--mode", synth_flags.mode)->check(CLI::IsMember({"word", "line"}))->capture_default_str();
  gen_synth->add_option("--distort", synth_flags.distort, "bend, wave, blur, fragment, noise, all or none")
      ->check(CLI::IsMember({"bend", "wave", "blur", "fragment", "noise", "all", "none"}));
  gen_synth->add_option("--n", synth_flags.n, "Number of samples (default: one per word)");
  gen_synth->add_option("--out", synth_flags.out, "Output directory")->required();
  gen_synth->add_option("--words-out", synth_flags.words_out, "Also write the word list used");

  // train
  TrainFlags train_flags;
  auto* train = app.add_subcommand("train", "Run one training stage");
  add_common(train, common);
  train->add_option("--stage", train_flags.stage)
      ->check(CLI::IsMember({"pretrain_line", "pretrain_word", "finetune"}))
      ->capture_default_str();
  train->add_option("--train-manifest", train_flags.train_manifest)->required();
  train->add_option("--eval-manifest", train_flags.eval_manifest);
  train->add_option("--checkpoint-dir", train_flags.checkpoint_dir)->required();
  train->add_option("--batch-size", train_flags.train.batch_size)->capture_default_str();
  train->add_option("--lr", train_flags.lr, "Learning rate (stage default when omitted)");
  train->add_option("--epochs", train_flags.train.epochs)->capture_default_str();
  train->add_option("--eval-every", train_flags.train.eval_every, "Steps between held-out evaluations")
      ->capture_default_str();
  train->add_option("--dropout", train_flags.train.dropout)->capture_default_str();
  train->add_option("--clip-norm", train_flags.train.clip_norm)->capture_default_str();
  train->add_flag("--keep-epoch-checkpoints", train_flags.train.keep_epoch_checkpoints);
  train->add_option("--target-train-cer", train_flags.target_train_cer, "Stop once training CER reaches this");
  train->add_option("--train-eval-every", train_flags.train.train_eval_every, "Epochs between training-set CER checks")
      ->capture_default_str();
  train->add_option("--init", train_flags.init, "Checkpoint to start from")->check(CLI::ExistingFile);
  train->add_flag("--resume", train_flags.resume, "Continue optimizer state and epoch count from --init");
  train->add_option("--tokenizer", train_flags.tokenizer)->check(CLI::IsMember(kTokenizerNames))->capture_default_str();
  train->add_option("--vocab", train_flags.vocab, "Vocab or BPE model for a fresh model")->check(CLI::ExistingFile);
  train->add_option("--init-seed", train_flags.init_seed, "Parameter init seed (default: --seed)");
  train_flags.model.add(train);

  // eval
  std::string checkpoint, manifest, hypotheses;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a manifest, or score a hypotheses file");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint)->check(CLI::ExistingFile);
  eval->add_option("--manifest", manifest)->check(CLI::ExistingFile);
  eval->add_option("--hypotheses", hypotheses, "JSONL written by recognize")->check(CLI::ExistingFile);
  eval->add_option("--out", out, "Also write the report JSON here");

  // recognize
  std::vector<std::string> images;
  std::string expect_config;
  auto* recognize_cmd = app.add_subcommand("recognize", "Transcribe word images");
  add_common(recognize_cmd, common);
  recognize_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  auto* image_opt = recognize_cmd->add_option("--image", images, "PGM image(s)")->check(CLI::ExistingFile);
  auto* manifest_opt = recognize_cmd->add_option("--manifest", manifest)->check(CLI::ExistingFile);
  image_opt->excludes(manifest_opt);
  recognize_cmd->add_option("--out", out, "Hypotheses JSONL path in manifest mode (default hypotheses.jsonl)");
  recognize_cmd->add_option("--expect-config", expect_config, "Model config JSON the checkpoint must match")
      ->check(CLI::ExistingFile);

  // bench
  int repeats = 5;
  auto* bench_cmd = app.add_subcommand("bench", "Measure recognition throughput in words per second");
  add_common(bench_cmd, common);
  bench_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--repeats", repeats)->check(CLI::PositiveNumber)->capture_default_str();

  // count-params
  ModelFlags count_model;
  Index vocab_size = 0;
  auto* count = app.add_subcommand("count-params", "Count trainable parameters of a model configuration");
  add_common(count, common);
  count_model.add(count);
  count->add_option("--vocab-size", vocab_size);
  count->add_option("--tokenizer", tokenizer_name)->check(CLI::IsMember(kTokenizerNames))->capture_default_str();
  count->add_option("--vocab", vocab_path, "Take the vocab size from this tokenizer file")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << "\n" << app.help();
    return 2;
  }

  try {
    if (*build_vocab) return run_build_vocab(common, corpus, out, min_count, seg_mode);
    if (*bpe_train) return run_bpe_train(common, corpus, out, target_vocab, match_vocab);
    if (*tokenize) return run_tokenize(common, tokenizer_name, vocab_path, text_input, from_stdin, frame);
    if (*gen_synth) return run_gen_synth(common, synth_flags);
    if (*train) return run_train(common, train_flags);
    if (*eval) return run_eval(common, checkpoint, manifest, hypotheses, out);
    if (*recognize_cmd) return run_recognize(common, checkpoint, images, manifest, out, expect_config);
    if (*bench_cmd) return run_bench(common, checkpoint, manifest, repeats);
    if (*count) return run_count_params(common, count_model.config, vocab_size, tokenizer_name, vocab_path);
  } catch (const CheckpointMismatch& e) {
    std::cerr << "error: checkpoint mismatch at tensor '" << e.tensor() << "': " << e.what() << '\n';
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace gradet::cli

int main(int argc, char** argv) { return gradet::cli::main(argc, argv); }
