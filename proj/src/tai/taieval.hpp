// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Test-time scoring, zero-shot baselines, score fusion, average precision and
// correlation-map export.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tai/dualenc.hpp"
#include "tai/taitrain.hpp"

namespace tai::eval {

using grad::Tensor;

struct EvalConfig {
  double spatial_temperature = 0.02;
  /// Weight of the global branch: final = w·p + (1 − w)·p′.
  double merge_weight = 0.5;
  void validate() const;
};

/// Final per-class score of one image: w·p + (1 − w)·p′.
std::vector<double> classify_image(const Tensor& image, const train::ClassEmbeddings& emb, const enc::DualEncoder& enc,
                                   const EvalConfig& cfg);
std::vector<double> classify_image(const Tensor& image, const train::PromptSet& prompts, const enc::DualEncoder& enc,
                                   const EvalConfig& cfg);

/// Batched scoring of cached image features; result is n × C.
Tensor score_features(const enc::FeatureCache& images, const train::ClassEmbeddings& emb, const EvalConfig& cfg);

/// Class embeddings from a hand-written template, used for both branches.
train::ClassEmbeddings template_embeddings(const enc::DualEncoder& enc, std::span<const std::string> class_names,
                                           std::string_view templ);

/// Zero-shot scores of one image with "a photo of a [CLASS]" in both branches.
std::vector<double> zero_shot_scores(const Tensor& image, std::span<const std::string> class_names,
                                     const enc::DualEncoder& enc, const EvalConfig& cfg);

/// λ·norm(p1) + (1 − λ)·norm(p2), each input min-max normalised over its own entries.
std::vector<double> ensemble(std::span<const double> p1, std::span<const double> p2, double lambda);
/// Matrix form used for score files: each source is min-max normalised over
/// the whole matrix, which keeps every per-class ranking of that source intact.
Tensor ensemble_scores(const Tensor& a, const Tensor& b, double lambda);

/// Non-interpolated AP of one class; nullopt when the class has no positives.
/// Images are ranked by descending score with ties kept in input order.
std::optional<double> average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct MetricsReport {
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> ap;
  double map = 0.0;
};

/// scores is n × C; labels holds n rows of length C. mAP averages non-skipped classes.
MetricsReport evaluate(const Tensor& scores, std::span<const std::vector<std::uint8_t>> labels,
                       std::span<const std::string> class_names);

std::string format_metrics_csv(const MetricsReport& report);
void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report);

std::string format_scores_csv(const Tensor& scores);
void write_scores_csv(const std::filesystem::path& path, const Tensor& scores);
Tensor read_scores_csv(const std::filesystem::path& path);

/// P (C × N): similarity of each dense feature row with each local class embedding.
Tensor correlation_map(const Tensor& dense, const train::ClassEmbeddings& emb);

/// Writes `<stem>.csv` and, when grid dims are given, `<stem>_<class>.pgm` per class.
void export_correlation_map(const Tensor& P, std::span<const std::string> class_names,
                            const std::filesystem::path& stem, std::size_t grid_h = 0, std::size_t grid_w = 0);

std::string format_pgm(std::span<const double> values, std::size_t height, std::size_t width);

}  // namespace tai::eval
