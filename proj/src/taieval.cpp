// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include "tai/taieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tai/error.hpp"
#include "tai/templates.hpp"

namespace tai::eval {

using namespace tai::grad;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << body;
  if (!out) throw IoError("write failed for " + path.string());
}

std::pair<double, double> min_max(std::span<const double> v) {
  if (v.empty()) throw ValidationError("ensemble: empty scores");
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {*lo, *hi};
}

// Constant inputs carry no ranking information and map to zero.
double normalise(double x, double lo, double hi) { return hi > lo ? (x - lo) / (hi - lo) : 0.0; }

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("ensemble: lambda must be in [0, 1], got " + num(lambda));
}

}  // namespace

void EvalConfig::validate() const {
  if (!(spatial_temperature > 0.0)) throw ValidationError("eval: spatial_temperature must be > 0");
  if (!(merge_weight >= 0.0 && merge_weight <= 1.0)) throw ValidationError("eval: merge_weight must be in [0, 1]");
}

std::vector<double> classify_image(const Tensor& image, const train::ClassEmbeddings& emb,
                                   const enc::DualEncoder& enc, const EvalConfig& cfg) {
  cfg.validate();
  train::LossConfig lc;
  lc.spatial_temperature = cfg.spatial_temperature;
  const auto b = train::score(enc.image.encode(image), emb, lc);
  std::vector<double> out(b.p.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = cfg.merge_weight * b.p[i] + (1.0 - cfg.merge_weight) * b.p_agg[i];
  return out;
}

std::vector<double> classify_image(const Tensor& image, const train::PromptSet& prompts, const enc::DualEncoder& enc,
                                   const EvalConfig& cfg) {
  return classify_image(image, train::compute_class_embeddings(prompts, enc), enc, cfg);
}

Tensor score_features(const enc::FeatureCache& images, const train::ClassEmbeddings& emb, const EvalConfig& cfg) {
  cfg.validate();
  if (images.global.cols() != emb.global.cols() || images.tokens.cols() != emb.local.cols())
    throw ValidationError("score: feature dim " + std::to_string(images.global.cols()) + " vs embedding dim " +
                          std::to_string(emb.global.cols()));
  Tensor p = matmul_nt(Var(images.global), Var(emb.global)).value();
  if (cfg.merge_weight == 1.0) return p;
  Tensor dense = matmul_nt(Var(images.tokens), Var(emb.local)).value();
  Tensor pa = segment_softmax_pool(Var(std::move(dense)), images.segments, cfg.spatial_temperature).value();
  auto pd = p.data();
  auto ad = pa.data();
  for (std::size_t i = 0; i < pd.size(); ++i) pd[i] = cfg.merge_weight * pd[i] + (1.0 - cfg.merge_weight) * ad[i];
  return p;
}

train::ClassEmbeddings template_embeddings(const enc::DualEncoder& enc, std::span<const std::string> class_names,
                                           std::string_view templ) {
  const auto at = templ.find(kClassPlaceholder);
  if (at == std::string_view::npos)
    throw ValidationError("template without " + std::string(kClassPlaceholder) + ": \"" + std::string(templ) + "\"");
  std::vector<std::vector<std::size_t>> seqs;
  for (const auto& name : class_names) {
    std::string text(templ);
    text.replace(at, kClassPlaceholder.size(), name);
    for (const auto& w : enc::split_words(text))
      if (!enc.vocab.find(w)) throw ValidationError("template: unknown token '" + w + "' in \"" + text + "\"");
    seqs.push_back(enc.vocab.encode(text, enc.config.max_text_len, false));
  }
  enc::Binder bind;
  Tensor g = enc.text.forward(seqs, bind).global.value();
  return {g, g};
}

std::vector<double> zero_shot_scores(const Tensor& image, std::span<const std::string> class_names,
                                     const enc::DualEncoder& enc, const EvalConfig& cfg) {
  return classify_image(image, template_embeddings(enc, class_names, kZeroShotTemplate), enc, cfg);
}

std::vector<double> ensemble(std::span<const double> p1, std::span<const double> p2, double lambda) {
  check_lambda(lambda);
  if (p1.size() != p2.size())
    throw ValidationError("ensemble: length " + std::to_string(p1.size()) + " vs " + std::to_string(p2.size()));
  auto [lo1, hi1] = min_max(p1);
  auto [lo2, hi2] = min_max(p2);
  std::vector<double> out(p1.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = lambda * normalise(p1[i], lo1, hi1) + (1.0 - lambda) * normalise(p2[i], lo2, hi2);
  return out;
}

Tensor ensemble_scores(const Tensor& a, const Tensor& b, double lambda) {
  check_lambda(lambda);
  if (a.shape() != b.shape())
    throw ValidationError("ensemble: score shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto [lo1, hi1] = min_max(a.data());
  auto [lo2, hi2] = min_max(b.data());
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = normalise(a.data()[i], lo1, hi1);
    const double y = normalise(b.data()[i], lo2, hi2);
    // Endpoints return one source untouched so its rankings survive bit for bit.
    out.data()[i] = lambda == 1.0 ? x : lambda == 0.0 ? y : lambda * x + (1.0 - lambda) * y;
  }
  return out;
}

std::optional<double> average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size())
    throw ValidationError("average_precision: " + std::to_string(scores.size()) + " scores but " +
                          std::to_string(labels.size()) + " labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (!labels[order[k]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

MetricsReport evaluate(const Tensor& scores, std::span<const std::vector<std::uint8_t>> labels,
                       std::span<const std::string> class_names) {
  const std::size_t n = scores.rows(), c = scores.cols();
  if (labels.size() != n)
    throw ValidationError("evaluate: " + std::to_string(n) + " score rows but " + std::to_string(labels.size()) +
                          " label rows");
  if (class_names.size() != c)
    throw ValidationError("evaluate: " + std::to_string(c) + " score columns but " +
                          std::to_string(class_names.size()) + " classes");
  MetricsReport r;
  r.class_names.assign(class_names.begin(), class_names.end());
  std::vector<double> col(n);
  std::vector<std::uint8_t> ycol(n);
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i].size() != c) throw ValidationError("evaluate: label row " + std::to_string(i) + " has wrong length");
      col[i] = scores(i, j);
      ycol[i] = labels[i][j];
    }
    r.ap.push_back(average_precision(col, ycol));
    if (r.ap.back()) sum += *r.ap.back(), ++counted;
  }
  r.map = counted ? sum / static_cast<double>(counted) : 0.0;
  return r;
}

std::string format_metrics_csv(const MetricsReport& report) {
  std::string out = "class_index,class_name,ap\n";
  for (std::size_t i = 0; i < report.ap.size(); ++i)
    out += std::to_string(i) + "," + report.class_names[i] + "," + (report.ap[i] ? num(*report.ap[i]) : "skipped") +
           "\n";
  out += "-,mAP," + num(report.map) + "\n";
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report) {
  write_file(path, format_metrics_csv(report));
}

std::string format_scores_csv(const Tensor& scores) {
  std::string out;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    for (std::size_t j = 0; j < scores.cols(); ++j) out += (j ? "," : "") + num(scores(i, j));
    out += "\n";
  }
  return out;
}

void write_scores_csv(const std::filesystem::path& path, const Tensor& scores) {
  write_file(path, format_scores_csv(scores));
}

Tensor read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<double> values;
  std::size_t cols = 0, rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++rows;
    std::stringstream ss(line);
    std::string cell;
    std::size_t count = 0;
    while (std::getline(ss, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cell.size() || !std::isfinite(v))
        throw ValidationError(path.string() + ":" + std::to_string(rows) + ": bad score '" + cell + "'");
      values.push_back(v);
      ++count;
    }
    if (rows == 1) cols = count;
    if (count != cols)
      throw ValidationError(path.string() + ":" + std::to_string(rows) + ": expected " + std::to_string(cols) +
                            " columns, found " + std::to_string(count));
  }
  if (rows == 0) throw ValidationError(path.string() + ": no scores");
  return Tensor({rows, cols}, std::move(values));
}

Tensor correlation_map(const Tensor& dense, const train::ClassEmbeddings& emb) {
  if (dense.cols() != emb.local.cols())
    throw ValidationError("correlation_map: feature dim " + std::to_string(dense.cols()) + " vs " +
                          std::to_string(emb.local.cols()));
  return matmul_nt(Var(emb.local), Var(dense)).value();
}

std::string format_pgm(std::span<const double> values, std::size_t height, std::size_t width) {
  if (values.size() != height * width)
    throw ValidationError("pgm: " + std::to_string(values.size()) + " values for a " + std::to_string(height) + "x" +
                          std::to_string(width) + " grid");
  auto [lo, hi] = min_max(values);
  std::string out = "P2\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const auto level = static_cast<int>(std::lround(255.0 * normalise(values[r * width + c], lo, hi)));
      out += (c ? " " : "") + std::to_string(level);
    }
    out += "\n";
  }
  return out;
}

void export_correlation_map(const Tensor& P, std::span<const std::string> class_names,
                            const std::filesystem::path& stem, std::size_t grid_h, std::size_t grid_w) {
  if (P.rows() != class_names.size())
    throw ValidationError("heatmap: " + std::to_string(P.rows()) + " rows for " +
                          std::to_string(class_names.size()) + " classes");
  std::string csv = "class";
  for (std::size_t j = 0; j < P.cols(); ++j) csv += "," + std::to_string(j);
  csv += "\n";
  for (std::size_t i = 0; i < P.rows(); ++i) {
    csv += class_names[i];
    for (std::size_t j = 0; j < P.cols(); ++j) csv += "," + num(P(i, j));
    csv += "\n";
  }
  auto with_suffix = [&](const std::string& suffix) {
    return stem.parent_path() / (stem.filename().string() + suffix);
  };
  write_file(with_suffix(".csv"), csv);
  if (grid_h == 0 && grid_w == 0) return;
  if (grid_h * grid_w != P.cols())
    throw ValidationError("heatmap: grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) + " vs " +
                          std::to_string(P.cols()) + " columns");
  for (std::size_t i = 0; i < P.rows(); ++i) {
    std::string name = class_names[i];
    std::replace(name.begin(), name.end(), ' ', '_');
    write_file(with_suffix("_" + name + ".pgm"), format_pgm(P.row(i), grid_h, grid_w));
  }
}

}  // namespace tai::eval
