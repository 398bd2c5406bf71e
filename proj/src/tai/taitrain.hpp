// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Learnable prompts, class embeddings, similarity scoring with spatial
// aggregation, multi-label losses and the prompt-tuning loop. Encoders are
// only ever read here; the two context matrices are the sole trainable state.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tai/dualenc.hpp"
#include "tai/gradcore.hpp"
#include "tai/nounfilter.hpp"

namespace tai::train {

using grad::Tensor;
using grad::Var;

/// Global and local contexts (each M × embed_dim) shared by every class, plus
/// the word ids of each class name.
struct PromptSet {
  Tensor global_context;
  Tensor local_context;
  std::vector<std::string> class_names;
  std::vector<std::vector<std::size_t>> class_tokens;
  /// Weight of the global branch in the final score; the local branch gets the rest.
  double merge_weight = 0.5;

  std::size_t context_length() const { return global_context.rows(); }
  std::size_t num_classes() const { return class_tokens.size(); }
  bool operator==(const PromptSet&) const = default;
};

/// Contexts drawn from N(0, stddev²). Every class-name word must be in the vocabulary.
PromptSet init_prompts(std::size_t context_length, const enc::DualEncoder& enc,
                       std::span<const std::string> class_names, std::uint64_t seed, double stddev = 0.02);

/// [SOS, ctx_0 .. ctx_{M-1}, class words, EOS] for every class.
std::vector<std::vector<std::size_t>> prompt_sequences(const PromptSet& prompts, const enc::DualEncoder& enc);

/// G (global) and L (local) class embeddings, C × D, unit rows.
struct ClassEmbeddings {
  Tensor global;
  Tensor local;
};

/// Differentiable variant: gradients reach the context Vars only.
struct ClassEmbeddingVars {
  Var global;
  Var local;
};

ClassEmbeddingVars class_embeddings(const PromptSet& prompts, const enc::DualEncoder& enc, const Var& global_context,
                                    const Var& local_context);
ClassEmbeddings compute_class_embeddings(const PromptSet& prompts, const enc::DualEncoder& enc);

enum class LossKind { kRanking, kBce, kAsl };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

struct LossConfig {
  LossKind kind = LossKind::kRanking;
  double margin = 1.0;
  /// Applied to p and p′ before any loss.
  double scale = 4.0;
  double gamma_pos = 1.0;
  double gamma_neg = 2.0;
  double asl_margin = 0.05;
  /// Temperature of the single-label softmax view (diagnostics only).
  double softmax_temperature = 0.01;
  double spatial_temperature = 0.02;
  void validate() const;
};

/// p_i = <u, G_i>, P_ij = <U_j, L_i>, p′_i = spatially aggregated row i of P.
struct ScoreBundle {
  std::vector<double> p;
  Tensor P;
  std::vector<double> p_agg;
};

ScoreBundle score(const enc::EncoderOutputs& features, const ClassEmbeddings& emb, const LossConfig& cfg);

/// Σ_j softmax_j(P_j / tau_s) · P_j.
double aggregate_local(std::span<const double> row, double tau_s);

/// Class posteriors softmax(p / tau) of the single-label view.
std::vector<double> class_probabilities(std::span<const double> scores, double tau);

// Per-sample losses on already-scaled scores. Labels must be 0/1.
double ranking_loss(std::span<const double> scores, std::span<const std::uint8_t> labels, double margin);
double bce_loss(std::span<const double> scores, std::span<const std::uint8_t> labels);
double asl_loss(std::span<const double> scores, std::span<const std::uint8_t> labels, double gamma_pos,
                double gamma_neg, double asl_margin);

/// Mean over rows of a B × C score matrix, recorded as a single tape op.
Var batch_loss(const Var& scores, std::span<const std::vector<std::uint8_t>> labels, const LossConfig& cfg);

enum class PromptMode {
  kGlobalOnly,   // global branch only
  kDoubleGrained,  // global + local branch
};

/// Batch objective as a function of the contexts: ranking (or BCE/ASL) loss on
/// the scaled global scores, plus the same loss on the scaled aggregated local
/// scores when `local_context` is given. `global` is n×D, `tokens` stacks the
/// dense rows delimited by `segments`.
Var prompt_objective(const Var& global, const Var& tokens, std::span<const grad::Segment> segments,
                     std::span<const std::vector<std::uint8_t>> labels, const PromptSet& prompts,
                     const enc::DualEncoder& enc, const Var& global_context, const Var* local_context,
                     const LossConfig& loss);

struct TrainConfig {
  std::size_t epochs = 20;
  double lr = 1.0;
  std::size_t batch = 64;
  std::uint64_t seed = 7;
  double init_stddev = 0.02;
  void validate() const;
};

struct TrainResult {
  PromptSet prompts;
  std::vector<double> epoch_loss;
};

/// Prompt tuning on cached features. `global` is n × D; `tokens` stacks the
/// dense rows delimited by `segments`. Only contexts change.
TrainResult train_on_features(const enc::FeatureCache& features, std::span<const std::vector<std::uint8_t>> labels,
                              const enc::DualEncoder& enc, PromptSet prompts, const LossConfig& loss,
                              const TrainConfig& cfg, PromptMode mode);

/// Texts stand in for images: (h, H) replace (f, F).
TrainResult train_prompts(std::span<const text::PseudoLabeledText> texts, const enc::DualEncoder& enc,
                          PromptSet prompts, const LossConfig& loss, const TrainConfig& cfg, PromptMode mode);

/// Image-supervised prompts on labeled images.
TrainResult train_prompts_from_images(std::span<const Tensor* const> images,
                                      std::span<const std::vector<std::uint8_t>> labels, const enc::DualEncoder& enc,
                                      PromptSet prompts, const LossConfig& loss, const TrainConfig& cfg,
                                      PromptMode mode);

}  // namespace tai::train
