// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small worlds and encoders that keep unit tests fast.

#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "tai/dualenc.hpp"
#include "tai/experiment.hpp"

namespace tai::testing {

inline enc::WorldConfig tiny_world_config(std::uint64_t seed = 3) {
  enc::WorldConfig w;
  w.seed = seed;
  w.classes = 4;
  w.train_pairs = 48;
  w.test_images = 24;
  w.grid_h = w.grid_w = 6;
  w.patch_dim = 8;
  w.corpus_sentences = 60;
  return w;
}

inline enc::EncoderConfig tiny_encoder_config() {
  enc::EncoderConfig e;
  e.embed_dim = 16;
  e.out_dim = 8;
  e.layers = 1;
  e.heads = 2;
  e.max_text_len = 24;
  e.grid_h = e.grid_w = 6;
  e.patch_dim = 8;
  e.mlp_hidden = 32;
  e.attn_window = 2;
  return e;
}

inline exp::Config tiny_config(std::uint64_t seed = 3) {
  exp::Config c;
  c.world = tiny_world_config(seed);
  c.encoder = tiny_encoder_config();
  c.pretrain.epochs = 2;
  c.pretrain.batch = 16;
  c.context_length = 4;
  c.train.epochs = 2;
  c.train.batch = 32;
  c.image_train.train = c.train;
  c.image_train.shots = 2;
  c.ablation_counts = {10, 20};
  c.apply_seed(seed);
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("tai_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace tai::testing
