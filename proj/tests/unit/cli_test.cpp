#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"

#ifndef GRADET_CLI_PATH
#error "GRADET_CLI_PATH must point at the gradet executable"
#endif

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI through the shell; stderr is discarded.
Run cli(const std::string& args, const std::string& stdin_file = "") {
  std::string cmd = std::string("'") + GRADET_CLI_PATH + "' " + args + " 2>/dev/null";
  if (!stdin_file.empty()) cmd += " < '" + stdin_file + "'";
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

struct Workdir {
  fs::path path = fs::temp_directory_path() / ("gradet_cli_" + std::to_string(::getpid()));
  Workdir() {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Workdir() { fs::remove_all(path); }
  std::string file(const std::string& name, const std::string& content) const {
    std::ofstream(path / name, std::ios::binary) << content;
    return (path / name).string();
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("cli: usage errors exit 2") {
  CHECK(cli("").code == 2);
  CHECK(cli("no-such-command").code == 2);
  CHECK(cli("count-params --vocab-size 10 --bogus").code == 2);
  CHECK(cli("count-params").code == 2);
  CHECK(cli("tokenize --tokenizer sentencepiece --text x").code == 2);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("cli: build-vocab and tokenize") {
  Workdir w;
  const auto corpus = w.file("corpus.txt", "বাংলা ক্ষমা\nস্ত্রী\n");
  REQUIRE(cli("build-vocab --corpus '" + corpus + "' --out '" + w / "v.txt" + "'").code == 0);

  const auto r = cli("tokenize --tokenizer grapheme --vocab '" + w / "v.txt" + "' --text 'স্ত্রী'");
  CHECK(r.code == 0);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1);
  CHECK(r.out.find("\tস্ত্রী\n") != std::string::npos);

  const auto framed = cli("tokenize --vocab '" + w / "v.txt" + "' --frame --json --text 'বাংলা'");
  CHECK(framed.code == 0);
  const auto j = nlohmann::json::parse(framed.out);
  REQUIRE(j["tokens"].size() == 4);
  CHECK(j["tokens"][0]["id"] == 2);  // BOS
  CHECK(j["tokens"][3]["id"] == 3);  // EOS

  // Empty stdin is a valid empty input.
  const auto empty = w.file("empty.txt", "");
  const auto e = cli("tokenize --vocab '" + w / "v.txt" + "' --stdin", empty);
  CHECK(e.code == 0);
  CHECK(e.out.empty());
  const auto nl = cli("tokenize --vocab '" + w / "v.txt" + "' --stdin", w.file("nl.txt", "ক্ষমা\n"));
  CHECK(nl.out == cli("tokenize --vocab '" + w / "v.txt" + "' --text ক্ষমা").out);

  // Invalid UTF-8 and bad vocab files are data errors.
  CHECK(cli("tokenize --vocab '" + w / "v.txt" + "' --stdin", w.file("bad.txt", "\xff\xfe")).code == 3);
  CHECK(cli("tokenize --vocab '" + w.file("broken.txt", "not a vocab\n") + "' --text x").code == 3);
}

TEST_CASE("cli: count-params with a config file") {
  Workdir w;
  const auto toy = "--hidden 64 --layers 2 --heads 4 --max-seq 160 --vocab-size 100";
  const auto r = cli(std::string("count-params ") + toy);
  CHECK(r.code == 0);
  CHECK(r.out == "129344\n");
  const auto cfg = w.file("c.json", R"({"model": {"hidden": 64, "layers": 2, "heads": 4, "max_seq": 160}, "vocab_size": 100})");
  CHECK(cli("count-params --config '" + cfg + "'").out == "129344\n");
  // Flags override the file; each extra token adds an embedding row and a head row.
  CHECK(cli("count-params --config '" + cfg + "' --vocab-size 101").out == "129472\n");
  const auto bad = w.file("bad.json", R"({"hidden": 64, "bogus": 1})");
  CHECK(cli("count-params --vocab-size 10 --config '" + bad + "'").code == 2);
  CHECK(cli("count-params --hidden 65 --heads 4 --vocab-size 10").code == 2);
}

TEST_CASE("cli: synth, train, recognize, eval, bench") {
  Workdir w;
  REQUIRE(cli("gen-synth --pseudo-words 6 --seed 2 --n 8 --out '" + w / "data" + "' --words-out '" + w / "words.txt" +
              "'")
              .code == 0);
  REQUIRE(fs::exists(w / "data/manifest.jsonl"));
  REQUIRE(cli("build-vocab --corpus '" + w / "words.txt" + "' --out '" + w / "v.txt" + "'").code == 0);
  const std::string model = " --hidden 16 --layers 1 --heads 2 --max-seq 136";
  REQUIRE(cli("train --train-manifest '" + w / "data/manifest.jsonl" + "' --checkpoint-dir '" + w / "ck" +
              "' --vocab '" + w / "v.txt" + "' --batch-size 4 --epochs 1 --lr 1e-3" + model)
              .code == 0);
  const auto ckpt = w / "ck/final.ckpt";
  REQUIRE(fs::exists(ckpt));

  const auto rec = cli("recognize --checkpoint '" + ckpt + "' --manifest '" + w / "data/manifest.jsonl" + "' --out '" +
                       w / "hyp.jsonl" + "'");
  CHECK(rec.code == 0);
  CHECK(std::count(rec.out.begin(), rec.out.end(), '\n') == 8);
  const auto ev = cli("eval --json --hypotheses '" + w / "hyp.jsonl" + "'");
  CHECK(ev.code == 0);
  const auto ev2 = cli("eval --json --checkpoint '" + ckpt + "' --manifest '" + w / "data/manifest.jsonl" + "'");
  CHECK(ev2.code == 0);
  CHECK(nlohmann::json::parse(ev.out)["cer"] == nlohmann::json::parse(ev2.out)["cer"]);

  const auto mismatch = w.file("m.json", R"({"hidden": 32, "layers": 1, "heads": 2, "max_seq": 136})");
  CHECK(cli("recognize --checkpoint '" + ckpt + "' --expect-config '" + mismatch + "' --manifest '" +
            w / "data/manifest.jsonl" + "' --out '" + w / "h2.jsonl" + "'")
            .code == 3);
  CHECK(cli("recognize --checkpoint '" + w.file("junk.ckpt", "junk") + "' --manifest '" + w / "data/manifest.jsonl" +
            "'")
            .code == 3);
  CHECK(cli("train --stage finetune --train-manifest '" + w / "data/manifest.jsonl" + "' --checkpoint-dir '" +
            w / "ck2" + "' --vocab '" + w / "v.txt" + "'" + model)
            .code == 2);

  const auto b = cli("bench --json --repeats 2 --checkpoint '" + ckpt + "' --manifest '" + w / "data/manifest.jsonl" +
                     "'");
  CHECK(b.code == 0);
  const auto j = nlohmann::json::parse(b.out);
  CHECK(j["runs"].size() == 2);
  CHECK(j["n_words"] == 8);
  CHECK(cli("bench --repeats 0 --checkpoint '" + ckpt + "' --manifest '" + w / "data/manifest.jsonl" + "'").code == 2);
}
