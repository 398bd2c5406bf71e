// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "fixtures.hpp"

namespace {

constexpr const char* kTinyConfig = R"({
  "seed": 9,
  "world": {"classes": 3, "train_pairs": 40, "test_images": 32, "grid_h": 6, "grid_w": 6, "patch_dim": 8,
            "corpus_sentences": 40},
  "encoder": {"embed_dim": 16, "out_dim": 8, "layers": 1, "heads": 2, "max_text_len": 24, "mlp_hidden": 16},
  "pretrain": {"epochs": 1, "batch": 16},
  "prompts": {"context_length": 4},
  "train": {"epochs": 2, "batch": 32}
})";

// Exit status of the CLI run with `args`; output goes to `log`.
int tai(const std::string& args, const std::filesystem::path& log = "/dev/null") {
  const std::string cmd = std::string(TAI_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::ofstream(dir / "c.json") << kTinyConfig;
    cfg = " --config " + (dir / "c.json").string();
  }
  std::string p(const std::string& name) const { return (dir / name).string(); }
  tai::testing::TempDir dir;
  std::string cfg;
};

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(tai(""), 2);
  EXPECT_EQ(tai("no-such-command"), 2);
  EXPECT_EQ(tai("gen-world"), 2);
  EXPECT_EQ(tai("eval --world /nonexistent --ckpt x"), 2);
  EXPECT_EQ(tai("--version"), 0);
}

TEST_F(CliTest, ValidationAndIoErrors) {
  std::ofstream(dir / "bad.json") << R"({"loss": {"spatial_temperature": 0}})";
  EXPECT_EQ(tai("gen-world --config " + p("bad.json") + " --out " + p("w")), 3);
  EXPECT_EQ(tai("gen-world" + cfg + " --classes 1 --out " + p("w")), 3);
  EXPECT_EQ(tai("gen-world" + cfg + " --out /proc/forbidden/w"), 4);
  std::ofstream(dir / "junk.taic") << "not a checkpoint";
  ASSERT_EQ(tai("gen-world" + cfg + " --out " + p("w")), 0);
  EXPECT_EQ(tai("eval --world " + p("w") + " --ckpt " + p("junk.taic")), 4);
}

TEST_F(CliTest, SeededRunsAreByteIdentical) {
  for (const char* run : {"r1", "r2"}) {
    const std::string r = p(run);
    std::filesystem::create_directories(r);
    ASSERT_EQ(tai("gen-world" + cfg + " --out " + r + "/w"), 0);
    ASSERT_EQ(tai("pretrain" + cfg + " --world " + r + "/w --out " + r + "/e.taic"), 0);
    ASSERT_EQ(tai("filter" + cfg + " --world " + r + "/w --out " + r + "/t.jsonl"), 0);
    ASSERT_EQ(tai("train-prompts" + cfg + " --texts " + r + "/t.jsonl --ckpt " + r + "/e.taic --out " + r + "/p.taic"), 0);
    ASSERT_EQ(tai("eval" + cfg + " --world " + r + "/w --ckpt " + r + "/e.taic --prompts " + r + "/p.taic --scores " + r +
                  "/s.csv --metrics " + r + "/m.csv", r + "/eval.log"), 0);
  }
  for (const char* f : {"w/patches.bin", "w/world.json", "w/corpus.txt", "e.taic", "t.jsonl", "p.taic", "s.csv", "m.csv"})
    EXPECT_EQ(slurp(dir / "r1" / f), slurp(dir / "r2" / f)) << f;
  EXPECT_EQ(slurp(dir / "r1/eval.log").rfind("mAP ", 0), 0u);

  ASSERT_EQ(tai("gen-world" + cfg + " --seed 10 --out " + p("r3")), 0);
  EXPECT_NE(slurp(dir / "r1/w/patches.bin"), slurp(dir / "r3/patches.bin"));
  ASSERT_EQ(::setenv("TAI_SEED", "10", 1), 0);
  ASSERT_EQ(tai("gen-world" + cfg + " --out " + p("r4")), 0);
  ::unsetenv("TAI_SEED");
  EXPECT_EQ(slurp(dir / "r3/patches.bin"), slurp(dir / "r4/patches.bin"));
}

}  // namespace
