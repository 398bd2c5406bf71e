// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration and the end-to-end runs built from the modules:
// corpus preparation, prompt training in each mode, evaluation, ensembling,
// localisation of the correlation maps and the corpus-size sweep.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tai/dualenc.hpp"
#include "tai/nounfilter.hpp"
#include "tai/taieval.hpp"
#include "tai/taitrain.hpp"

namespace tai::exp {

struct ImageTrainConfig {
  /// Labeled training scenes per class (a scene counts for every class it contains).
  std::size_t shots = 4;
  train::TrainConfig train;
  /// "tai" (global only) or "tai-dpt".
  std::string mode = "tai";
};

struct Config {
  std::uint64_t seed = 7;
  enc::WorldConfig world;
  enc::EncoderConfig encoder;
  enc::PretrainConfig pretrain;
  std::size_t context_length = 16;
  train::LossConfig loss;
  train::TrainConfig train;
  ImageTrainConfig image_train;
  eval::EvalConfig eval;
  double ensemble_lambda = 0.6;
  /// Empty means the built-in 80 templates.
  std::vector<std::string> templates;
  std::vector<std::size_t> ablation_counts = {50, 100, 200, 400, 800, 1600};

  /// Rejects anything a module would reject later, naming the key.
  void validate() const;
  /// Pushes the top-level seed into every stage.
  void apply_seed(std::uint64_t s);
};

/// JSON with the same nesting as `to_json`; unknown keys are rejected.
Config parse_config(std::string_view json, std::string_view source = "<memory>");
Config load_config(const std::filesystem::path& path);
std::string to_json(const Config& cfg);

/// TAI_SEED, when set, replaces the seed.
void apply_seed_env(Config& cfg);

std::vector<std::string> load_templates(const std::filesystem::path& path);

train::PromptMode parse_mode(std::string_view mode);

/// Filtered corpus sentences followed by injected templates.
std::vector<text::PseudoLabeledText> build_text_corpus(const enc::SyntheticWorld& world, const Config& cfg);

train::PromptSet fresh_prompts(const Config& cfg, const enc::DualEncoder& enc,
                               const std::vector<std::string>& class_names);

train::TrainResult train_text_prompts(const Config& cfg, const enc::DualEncoder& enc,
                                      std::span<const text::PseudoLabeledText> texts,
                                      const std::vector<std::string>& class_names, train::PromptMode mode);

/// k-shot selection: for each class in order, the first `shots` training
/// scenes containing it that are not already chosen.
std::vector<std::size_t> few_shot_scenes(const enc::SyntheticWorld& world, std::size_t shots);

train::TrainResult train_image_prompts(const Config& cfg, const enc::DualEncoder& enc,
                                       const enc::SyntheticWorld& world);

/// Frozen test-image features, computed once per encoder.
struct TestSet {
  std::vector<std::size_t> scenes;
  enc::FeatureCache features;
  std::vector<std::vector<std::uint8_t>> labels;
};
TestSet encode_test_set(const enc::DualEncoder& enc, const enc::SyntheticWorld& world);

/// n × C final scores; merge weight comes from the prompts.
grad::Tensor score_test_set(const Config& cfg, const enc::DualEncoder& enc, const TestSet& test,
                            const train::PromptSet& prompts);
grad::Tensor zero_shot_test_set(const Config& cfg, const enc::DualEncoder& enc, const TestSet& test,
                                const std::vector<std::string>& class_names);

/// Fraction of (test scene, present class) pairs whose argmax patch of the
/// local correlation map lies inside that class's block.
double localisation_rate(const enc::DualEncoder& enc, const enc::SyntheticWorld& world, const TestSet& test,
                         const train::PromptSet& prompts);

struct AblationPoint {
  std::size_t texts = 0;
  double map = 0.0;
};

/// Nested random subsets of the filtered sentences (templates always kept),
/// each trained in double-grained mode and scored on the test set.
std::vector<AblationPoint> ablate_corpus_size(const Config& cfg, const enc::DualEncoder& enc,
                                              const enc::SyntheticWorld& world,
                                              std::span<const text::PseudoLabeledText> sentences);
std::string format_ablation_csv(const std::vector<AblationPoint>& points);

struct RunSummary {
  std::uint64_t seed = 0;
  double retrieval = 0.0;
  double zero_shot = 0.0;
  double tai = 0.0;
  double tai_dpt = 0.0;
  double image = 0.0;
  double ensemble = 0.0;
  double ensemble_lambda0 = 0.0;
  double ensemble_lambda1 = 0.0;
  double localisation = 0.0;
  std::vector<double> dpt_epoch_loss;
  double seconds = 0.0;
};

/// What a finished run leaves behind, for follow-up work outside the timed region.
struct RunArtifacts {
  const enc::SyntheticWorld& world;
  const enc::DualEncoder& encoder;
  std::span<const text::PseudoLabeledText> texts;
};

/// One seed of the full pipeline: world, pretraining, every prompt variant,
/// evaluation. `after`, when set, runs once the summary (and its timing) is complete.
RunSummary run_pipeline(Config cfg, const std::function<void(const RunArtifacts&)>& after = {});

}  // namespace tai::exp
