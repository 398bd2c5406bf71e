// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <string>

#include "fixtures.hpp"
#include "tai/tai.h"

namespace {

constexpr const char* kTinyConfig = R"({
  "seed": 5,
  "world": {"classes": 3, "train_pairs": 40, "test_images": 32, "grid_h": 6, "grid_w": 6, "patch_dim": 8,
            "corpus_sentences": 40},
  "encoder": {"embed_dim": 16, "out_dim": 8, "layers": 1, "heads": 2, "max_text_len": 24, "mlp_hidden": 16},
  "pretrain": {"epochs": 1, "batch": 16},
  "prompts": {"context_length": 4},
  "train": {"epochs": 1, "batch": 32},
  "image_train": {"shots": 2, "train": {"epochs": 1, "batch": 32}},
  "ablation_counts": [5, 10]
})";

TEST(CApi, NullHandlesAreUsageErrors) {
  tai_config* cfg = nullptr;
  EXPECT_EQ(tai_config_default(nullptr), TAI_ERR_USAGE);
  EXPECT_NE(std::string(tai_last_error()), "");
  EXPECT_EQ(tai_world_generate(nullptr, nullptr), TAI_ERR_USAGE);
  EXPECT_EQ(tai_eval(nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr), TAI_ERR_USAGE);
  EXPECT_EQ(tai_world_num_classes(nullptr), 0u);
  EXPECT_EQ(tai_world_class_name(nullptr, 0), nullptr);
  EXPECT_TRUE(std::isnan(tai_config_lambda(nullptr)));
  tai_config_free(cfg);
  tai_world_free(nullptr);
  tai_encoder_free(nullptr);
  tai_prompts_free(nullptr);
}

TEST(CApi, ModeParsing) {
  tai_mode m{};
  EXPECT_EQ(tai_mode_parse("tai-dpt", &m), TAI_OK);
  EXPECT_EQ(m, TAI_MODE_TAI_DPT);
  EXPECT_EQ(tai_mode_parse("img", &m), TAI_OK);
  EXPECT_EQ(m, TAI_MODE_IMG);
  EXPECT_EQ(tai_mode_parse("other", &m), TAI_ERR_USAGE);
}

TEST(CApi, ConfigValidationAndJson) {
  tai::testing::TempDir dir;
  std::ofstream(dir / "bad.json") << R"({"eval": {"lambda": 2}})";
  tai_config* cfg = nullptr;
  EXPECT_EQ(tai_config_load((dir / "bad.json").c_str(), &cfg), TAI_ERR_VALIDATION);
  EXPECT_EQ(tai_config_load((dir / "none.json").c_str(), &cfg), TAI_ERR_IO);
  ASSERT_EQ(tai_config_default(&cfg), TAI_OK);
  EXPECT_EQ(tai_config_set_lambda(cfg, -0.1), TAI_ERR_VALIDATION);
  EXPECT_EQ(tai_config_set_classes(cfg, 1), TAI_ERR_VALIDATION);
  EXPECT_EQ(tai_config_set_lambda(cfg, 0.25), TAI_OK);
  EXPECT_EQ(tai_config_lambda(cfg), 0.25);
  size_t need = 0;
  EXPECT_EQ(tai_config_to_json(cfg, nullptr, 0, &need), TAI_OK);
  std::string buf(need, '\0');
  EXPECT_EQ(tai_config_to_json(cfg, buf.data(), buf.size(), &need), TAI_OK);
  EXPECT_NE(buf.find("\"lambda\": 0.25"), std::string::npos);
  tai_config_free(cfg);
}

TEST(CApi, EndToEndOnTinyWorld) {
  tai::testing::TempDir dir;
  std::ofstream(dir / "c.json") << kTinyConfig;
  tai_config* cfg = nullptr;
  ASSERT_EQ(tai_config_load((dir / "c.json").c_str(), &cfg), TAI_OK) << tai_last_error();
  tai_world* world = nullptr;
  ASSERT_EQ(tai_world_generate(cfg, &world), TAI_OK) << tai_last_error();
  EXPECT_EQ(tai_world_num_classes(world), 3u);
  EXPECT_EQ(tai_world_num_scenes(world), 72u);
  EXPECT_STREQ(tai_world_class_name(world, 1), "dog");
  EXPECT_EQ(tai_world_class_name(world, 3), nullptr);
  ASSERT_EQ(tai_world_save(world, (dir / "w").c_str()), TAI_OK);

  tai_encoder* enc = nullptr;
  ASSERT_EQ(tai_encoder_pretrain(cfg, world, &enc), TAI_OK) << tai_last_error();
  double acc = -1.0;
  ASSERT_EQ(tai_encoder_retrieval(enc, world, &acc), TAI_OK);
  EXPECT_GE(acc, 0.0);
  ASSERT_EQ(tai_encoder_save(enc, (dir / "e.taic").c_str()), TAI_OK);

  size_t n = 0;
  ASSERT_EQ(tai_filter_world(cfg, world, (dir / "t.jsonl").c_str(), &n), TAI_OK) << tai_last_error();
  EXPECT_GE(n, 80u * 3u);

  tai_prompts* prompts = nullptr;
  ASSERT_EQ(tai_prompts_train_texts(cfg, enc, (dir / "t.jsonl").c_str(), TAI_MODE_TAI_DPT, &prompts), TAI_OK)
      << tai_last_error();
  ASSERT_EQ(tai_prompts_save(prompts, (dir / "p.taic").c_str()), TAI_OK);
  tai_prompts* loaded = nullptr;
  ASSERT_EQ(tai_prompts_load((dir / "p.taic").c_str(), enc, &loaded), TAI_OK);

  double map_a = 0.0, map_b = 0.0, zs = 0.0, fused = 0.0;
  ASSERT_EQ(tai_eval(cfg, enc, world, prompts, (dir / "a.csv").c_str(), (dir / "ma.csv").c_str(), &map_a), TAI_OK);
  ASSERT_EQ(tai_eval(cfg, enc, world, loaded, nullptr, nullptr, &map_b), TAI_OK);
  EXPECT_NEAR(map_a, map_b, 1e-6);
  ASSERT_EQ(tai_eval(cfg, enc, world, nullptr, (dir / "z.csv").c_str(), nullptr, &zs), TAI_OK);
  ASSERT_EQ(tai_ensemble((dir / "a.csv").c_str(), (dir / "z.csv").c_str(), 1.0, (dir / "f.csv").c_str()), TAI_OK);
  ASSERT_EQ(tai_eval_scores(world, (dir / "f.csv").c_str(), nullptr, &fused), TAI_OK);
  EXPECT_EQ(fused, map_a);
  EXPECT_EQ(tai_ensemble((dir / "a.csv").c_str(), (dir / "z.csv").c_str(), 3.0, (dir / "f.csv").c_str()),
            TAI_ERR_VALIDATION);

  tai_prompts* img = nullptr;
  ASSERT_EQ(tai_prompts_train_images(cfg, enc, world, &img), TAI_OK) << tai_last_error();
  ASSERT_EQ(tai_heatmap(enc, world, prompts, 50, (dir / "h").c_str()), TAI_OK) << tai_last_error();
  EXPECT_TRUE(std::filesystem::exists(dir / "h.csv"));
  EXPECT_EQ(tai_heatmap(enc, world, prompts, 999, (dir / "h").c_str()), TAI_ERR_VALIDATION);
  ASSERT_EQ(tai_ablate_corpus_size(cfg, enc, world, nullptr, (dir / "abl.csv").c_str()), TAI_OK) << tai_last_error();

  EXPECT_EQ(tai_encoder_save(enc, "/nonexistent/dir/e.taic"), TAI_ERR_IO);
  tai_encoder* missing = nullptr;
  EXPECT_EQ(tai_encoder_load((dir / "none.taic").c_str(), &missing), TAI_ERR_IO);
  EXPECT_EQ(missing, nullptr);

  tai_prompts_free(img);
  tai_prompts_free(loaded);
  tai_prompts_free(prompts);
  tai_encoder_free(enc);
  tai_world_free(world);
  tai_config_free(cfg);
}

}  // namespace
