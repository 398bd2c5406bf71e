// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>

#include "tai/error.hpp"
#include "tai/experiment.hpp"

namespace {

using namespace tai;
using namespace tai::exp;

TEST(Config, DefaultsMatchReferenceHyperparameters) {
  const Config c = parse_config("{}");
  EXPECT_EQ(c.context_length, 16u);
  EXPECT_EQ(c.loss.margin, 1.0);
  EXPECT_EQ(c.loss.scale, 4.0);
  EXPECT_EQ(c.loss.spatial_temperature, 0.02);
  EXPECT_EQ(c.loss.gamma_pos, 1.0);
  EXPECT_EQ(c.loss.gamma_neg, 2.0);
  EXPECT_EQ(c.loss.asl_margin, 0.05);
  EXPECT_EQ(c.ensemble_lambda, 0.6);
  EXPECT_EQ(c.train.init_stddev, 0.02);
  EXPECT_EQ(c.train.epochs, 20u);
  EXPECT_EQ(c.pretrain.temperature, 0.07);
  EXPECT_EQ(c.encoder.embed_dim, 64u);
  EXPECT_EQ(c.encoder.out_dim, 32u);
}

TEST(Config, JsonRoundTrip) {
  Config c = parse_config(R"({"seed": 11, "loss": {"kind": "asl"}, "eval": {"lambda": 0.25}})");
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(c.train.seed, 13u);
  const Config again = parse_config(to_json(c));
  EXPECT_EQ(to_json(again), to_json(c));
  EXPECT_EQ(again.loss.kind, train::LossKind::kAsl);
}

TEST(Config, RejectsBadValues) {
  EXPECT_THROW(parse_config(R"({"wrold": {}})"), ValidationError);
  EXPECT_THROW(parse_config(R"({"loss": {"spatial_temperature": 0}})"), ValidationError);
  EXPECT_THROW(parse_config(R"({"loss": {"spatial_temperature": -1}})"), ValidationError);
  EXPECT_THROW(parse_config(R"({"eval": {"lambda": 1.5}})"), ValidationError);
  EXPECT_THROW(parse_config(R"({"prompts": {"context_length": 0}})"), ValidationError);
  EXPECT_THROW(parse_config(R"({"train": {"lr": "fast"}})"), ValidationError);
  EXPECT_THROW(parse_config(R"({"templates": ["no placeholder"]})"), ValidationError);
  EXPECT_THROW(parse_config("[1, 2"), ValidationError);
  EXPECT_THROW(load_config("/nonexistent/c.json"), IoError);
}

TEST(Config, ErrorsNameTheKey) {
  try {
    parse_config(R"({"loss": {"spatial_temperature": 0}})");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("spatial_temperature"), std::string::npos);
  }
}

TEST(Config, SeedFromEnvironment) {
  Config c = parse_config("{}");
  ::setenv("TAI_SEED", "42", 1);
  apply_seed_env(c);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.world.seed, 42u);
  ::setenv("TAI_SEED", "-3", 1);
  EXPECT_THROW(apply_seed_env(c), ValidationError);
  ::unsetenv("TAI_SEED");
  apply_seed_env(c);
  EXPECT_EQ(c.seed, 42u);
}

TEST(Config, ModeNames) {
  EXPECT_EQ(parse_mode("tai"), train::PromptMode::kGlobalOnly);
  EXPECT_EQ(parse_mode("tai-dpt"), train::PromptMode::kDoubleGrained);
  EXPECT_THROW(parse_mode("dpt"), ValidationError);
}

}  // namespace
