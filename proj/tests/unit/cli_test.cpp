#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <json.hpp>

#include "synth.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr folded into stdout.
Run cli(const std::string& args) {
  const std::string cmd = std::string(KWDIAL_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "kwdial_cli_test";
    fs::remove_all(dir_);
    kwdial::synth::SynthConfig c;
    c.train_dialogs = 60;
    c.valid_dialogs = 10;
    c.test_dialogs = 10;
    c.topics = 4;
    c.words_per_topic = 8;
    c.dim = 8;
    kwdial::synth::write(kwdial::synth::generate(c), dir_ / "raw");
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string prepare_args(const fs::path& out) {
    auto raw = dir_ / "raw";
    return "prepare --train " + (raw / "train.txt").string() + " --valid " + (raw / "valid.txt").string() +
           " --test " + (raw / "test.txt").string() + " --embeddings " + (raw / "embeddings.txt").string() +
           " --min-freq 1 --out " + out.string();
  }
  static std::string train_args(const fs::path& data, const fs::path& ckpt) {
    return "--seed 3 train --data " + data.string() + " --model-class kw_loss --d-model 16 --layers 1 --heads 2" +
           " --ffn 32 --max-len 96 --epochs 1 --batch 8 --lr 1e-3 --warmup 0 --max-steps 6 --valid-limit 5" +
           " --valid-kia-limit 2 --checkpoint " + ckpt.string() + " --log " + (ckpt.string() + ".log");
  }
  static inline fs::path dir_;
};

}  // namespace

TEST_F(CliFixture, UsageErrorsExitTwo) {
  auto r = cli("frobnicate");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("error: usage:"), std::string::npos) << r.out;
  r = cli("train");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("error: usage:"), std::string::npos);
  r = cli("generate --checkpoint x --num notanumber");
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliFixture, RuntimeErrorsExitOneWithKind) {
  auto r = cli("prepare --train /nonexistent/train.txt --embeddings /nonexistent/e.txt --out " +
               (dir_ / "never").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error: io:"), std::string::npos) << r.out;
  std::ofstream(dir_ / "garbage.ckpt") << "definitely not a checkpoint";
  r = cli("generate --checkpoint " + (dir_ / "garbage.ckpt").string() + " --keywords w");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error: unrecognized_format:"), std::string::npos) << r.out;
}

TEST_F(CliFixture, PrepareIsByteIdenticalAcrossRuns) {
  ASSERT_EQ(cli(prepare_args(dir_ / "p1")).code, 0);
  ASSERT_EQ(cli(prepare_args(dir_ / "p2")).code, 0);
  for (const char* f : {"vocab.txt", "train.jsonl", "valid.jsonl", "test.jsonl", "stats.json"}) {
    ASSERT_TRUE(fs::exists(dir_ / "p1" / f)) << f;
    EXPECT_EQ(slurp(dir_ / "p1" / f), slurp(dir_ / "p2" / f)) << f;
  }
  auto first = slurp(dir_ / "p1" / "train.jsonl");
  auto line = first.substr(0, first.find('\n'));
  auto j = nlohmann::json::parse(line);
  for (const char* k : {"context", "response", "keywords", "distractor"}) EXPECT_TRUE(j.contains(k)) << k;
}

TEST_F(CliFixture, TrainEvalGenerateAreDeterministic) {
  auto data = dir_ / "td";
  ASSERT_EQ(cli(prepare_args(data)).code, 0);
  auto a = cli(train_args(data, dir_ / "a.ckpt"));
  ASSERT_EQ(a.code, 0) << a.out;
  auto b = cli(train_args(data, dir_ / "b.ckpt"));
  ASSERT_EQ(b.code, 0) << b.out;
  EXPECT_EQ(slurp(dir_ / "a.ckpt"), slurp(dir_ / "b.ckpt"));
  EXPECT_EQ(slurp(dir_ / "a.ckpt.log"), slurp(dir_ / "b.ckpt.log"));

  const auto emb = (dir_ / "raw" / "embeddings.txt").string();
  auto eval = [&](const std::string& json) {
    return cli("--seed 1 eval --data " + data.string() + " --embeddings " + emb +
               " --max-new-tokens 10 --limit 6 --checkpoint " + (dir_ / "a.ckpt").string() + " --json " + json);
  };
  auto e1 = eval((dir_ / "e1.json").string());
  ASSERT_EQ(e1.code, 0) << e1.out;
  auto e2 = eval((dir_ / "e2.json").string());
  EXPECT_EQ(e1.out, e2.out);
  EXPECT_EQ(slurp(dir_ / "e1.json"), slurp(dir_ / "e2.json"));
  auto report = nlohmann::json::parse(slurp(dir_ / "e1.json"));
  EXPECT_EQ(report["rows"].size(), 1u);

  std::ofstream(dir_ / "ctx.txt") << "hello there\nhow are you\n";
  auto gen = [&] {
    return cli("--seed 1 generate --checkpoint " + (dir_ / "a.ckpt").string() + " --context-file " +
               (dir_ / "ctx.txt").string() + " --keywords topic --beams 4 --groups 2 --max-new-tokens 8");
  };
  auto g1 = gen();
  ASSERT_EQ(g1.code, 0) << g1.out;
  EXPECT_EQ(g1.out, gen().out);
}
