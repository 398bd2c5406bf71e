// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include "tai/taitrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tai/error.hpp"

namespace tai::train {

using namespace tai::grad;
using enc::DualEncoder;
using enc::FeatureCache;

namespace {

constexpr double kProbEps = 1e-7;

void check_labels(std::span<const double> scores, std::span<const std::uint8_t> labels, const char* op) {
  if (scores.size() != labels.size())
    throw ValidationError(std::string(op) + ": " + std::to_string(scores.size()) + " scores but " +
                          std::to_string(labels.size()) + " labels");
  for (auto y : labels)
    if (y > 1) throw ValidationError(std::string(op) + ": labels must be 0 or 1, got " + std::to_string(y));
}

double sigmoid_prob(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Per-sample loss value and, optionally, its gradient with respect to the scores.
double ranking_row(std::span<const double> s, std::span<const std::uint8_t> y, double m, double* g) {
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      const double h = m - s[i] + s[j];
      if (h > 0.0) {
        total += h;
        if (g) g[i] -= 1.0, g[j] += 1.0;
      }
    }
  }
  return total;
}

double asl_row(std::span<const double> s, std::span<const std::uint8_t> y, double gp, double gn, double shift,
               double* g) {
  const double inv_c = 1.0 / static_cast<double>(s.size());
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double raw = sigmoid_prob(s[i]);
    const bool clamped = raw < kProbEps || raw > 1.0 - kProbEps;
    const double q = std::clamp(raw, kProbEps, 1.0 - kProbEps);
    double dq = 0.0;  // d(term)/dq
    if (y[i]) {
      const double w = std::pow(1.0 - q, gp);
      total += w * std::log(q);
      const double dw = gp == 0.0 ? 0.0 : -gp * std::pow(1.0 - q, gp - 1.0);
      dq = dw * std::log(q) + w / q;
    } else {
      const double qm = std::max(q - shift, 0.0);
      const double w = std::pow(qm, gn);
      total += w * std::log(1.0 - qm);
      if (qm > 0.0) {
        const double dw = gn == 0.0 ? 0.0 : gn * std::pow(qm, gn - 1.0);
        dq = dw * std::log(1.0 - qm) - w / (1.0 - qm);
      }
    }
    if (g && !clamped) g[i] += -inv_c * dq * raw * (1.0 - raw);
  }
  return -inv_c * total;
}

double bce_row(std::span<const double> s, std::span<const std::uint8_t> y, double* g) {
  const double inv_c = 1.0 / static_cast<double>(s.size());
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double raw = sigmoid_prob(s[i]);
    const double q = std::clamp(raw, kProbEps, 1.0 - kProbEps);
    total += y[i] ? std::log(q) : std::log(1.0 - q);
    if (g && raw >= kProbEps && raw <= 1.0 - kProbEps) g[i] += -inv_c * (y[i] ? 1.0 - raw : -raw);
  }
  return -inv_c * total;
}

double loss_row(std::span<const double> s, std::span<const std::uint8_t> y, const LossConfig& cfg, double* g) {
  switch (cfg.kind) {
    case LossKind::kRanking:
      return ranking_row(s, y, cfg.margin, g);
    case LossKind::kBce:
      return bce_row(s, y, g);
    case LossKind::kAsl:
      return asl_row(s, y, cfg.gamma_pos, cfg.gamma_neg, cfg.asl_margin, g);
  }
  throw std::logic_error("unknown loss kind");
}

Var embed(const PromptSet& prompts, const DualEncoder& enc, const Var& context) {
  enc::Binder bind;
  const auto seqs = prompt_sequences(prompts, enc);
  return enc.text.forward(seqs, bind, &context).global;
}

}  // namespace

// ---- prompts -------------------------------------------------------------------

PromptSet init_prompts(std::size_t context_length, const DualEncoder& enc, std::span<const std::string> class_names,
                       std::uint64_t seed, double stddev) {
  if (context_length < 1) throw ValidationError("init_prompts: context length M must be >= 1");
  if (context_length > enc.vocab.context_slots())
    throw ValidationError("init_prompts: M=" + std::to_string(context_length) + " exceeds the " +
                          std::to_string(enc.vocab.context_slots()) + " context placeholders of the vocabulary");
  if (!(stddev >= 0.0)) throw ValidationError("init_prompts: stddev must be >= 0");
  if (class_names.empty()) throw ValidationError("init_prompts: no classes");
  PromptSet p;
  for (const auto& name : class_names) {
    std::vector<std::size_t> ids;
    for (const auto& w : enc::split_words(name)) {
      auto id = enc.vocab.find(w);
      if (!id) throw ValidationError("init_prompts: class '" + name + "' has unknown token '" + w + "'");
      ids.push_back(*id);
    }
    if (ids.empty()) throw ValidationError("init_prompts: class name '" + name + "' has no tokens");
    if (context_length + ids.size() + 2 > enc.config.max_text_len)
      throw ValidationError("init_prompts: prompt for '" + name + "' needs " +
                            std::to_string(context_length + ids.size() + 2) + " tokens, limit " +
                            std::to_string(enc.config.max_text_len));
    p.class_names.push_back(name);
    p.class_tokens.push_back(std::move(ids));
  }
  Rng rng(seed);
  p.global_context = Tensor::randn({context_length, enc.config.embed_dim}, rng, stddev);
  p.local_context = Tensor::randn({context_length, enc.config.embed_dim}, rng, stddev);
  return p;
}

std::vector<std::vector<std::size_t>> prompt_sequences(const PromptSet& prompts, const DualEncoder& enc) {
  const std::size_t m = prompts.context_length();
  if (m > enc.vocab.context_slots())
    throw ValidationError("prompts: M=" + std::to_string(m) + " exceeds the vocabulary's context placeholders");
  std::vector<std::vector<std::size_t>> out;
  for (const auto& name : prompts.class_tokens) {
    std::vector<std::size_t> seq{enc::Vocab::kSos};
    for (std::size_t k = 0; k < m; ++k) seq.push_back(enc.vocab.context_id(k));
    seq.insert(seq.end(), name.begin(), name.end());
    seq.push_back(enc::Vocab::kEos);
    if (seq.size() > enc.config.max_text_len)
      throw ValidationError("prompts: sequence of " + std::to_string(seq.size()) + " tokens exceeds " +
                            std::to_string(enc.config.max_text_len));
    out.push_back(std::move(seq));
  }
  return out;
}

ClassEmbeddingVars class_embeddings(const PromptSet& prompts, const DualEncoder& enc, const Var& global_context,
                                    const Var& local_context) {
  return {embed(prompts, enc, global_context), embed(prompts, enc, local_context)};
}

ClassEmbeddings compute_class_embeddings(const PromptSet& prompts, const DualEncoder& enc) {
  auto v = class_embeddings(prompts, enc, Var(prompts.global_context), Var(prompts.local_context));
  return {v.global.value(), v.local.value()};
}

// ---- scoring ---------------------------------------------------------------------

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kRanking:
      return "ranking";
    case LossKind::kBce:
      return "bce";
    case LossKind::kAsl:
      return "asl";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "ranking") return LossKind::kRanking;
  if (name == "bce") return LossKind::kBce;
  if (name == "asl") return LossKind::kAsl;
  throw ValidationError("unknown loss kind '" + std::string(name) + "' (expected ranking, bce or asl)");
}

void LossConfig::validate() const {
  if (!(spatial_temperature > 0.0)) throw ValidationError("loss: spatial_temperature must be > 0");
  if (!(softmax_temperature > 0.0)) throw ValidationError("loss: softmax_temperature must be > 0");
  if (!(scale > 0.0)) throw ValidationError("loss: scale must be > 0");
  if (!(margin >= 0.0)) throw ValidationError("loss: margin must be >= 0");
  if (!(gamma_pos >= 0.0) || !(gamma_neg >= 0.0)) throw ValidationError("loss: ASL gammas must be >= 0");
  if (!(asl_margin >= 0.0 && asl_margin < 1.0)) throw ValidationError("loss: asl_margin must be in [0, 1)");
}

double aggregate_local(std::span<const double> row, double tau_s) {
  if (!(tau_s > 0.0)) throw ValidationError("aggregate_local: tau_s must be > 0");
  if (row.empty()) throw ValidationError("aggregate_local: empty row");
  const auto w = softmax_with_temperature(row, tau_s);
  double out = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) out += w[j] * row[j];
  return out;
}

std::vector<double> class_probabilities(std::span<const double> scores, double tau) {
  return softmax_with_temperature(scores, tau);
}

ScoreBundle score(const enc::EncoderOutputs& features, const ClassEmbeddings& emb, const LossConfig& cfg) {
  const std::size_t d = features.global.size();
  if (emb.global.cols() != d || emb.local.cols() != d || features.sequence.cols() != d)
    throw ValidationError("score: feature dim " + std::to_string(d) + " vs class embeddings " +
                          std::to_string(emb.global.cols()) + "/" + std::to_string(emb.local.cols()) +
                          " vs dense " + std::to_string(features.sequence.cols()));
  if (emb.global.rows() != emb.local.rows()) throw ValidationError("score: G and L have different class counts");
  const std::size_t c = emb.global.rows();
  const std::size_t n = features.sequence.rows();
  ScoreBundle b;
  b.P = Tensor({c, n});
  for (std::size_t i = 0; i < c; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += features.global.data()[k] * emb.global(i, k);
    b.p.push_back(acc);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += features.sequence(j, k) * emb.local(i, k);
      b.P(i, j) = s;
    }
    b.p_agg.push_back(aggregate_local(b.P.row(i), cfg.spatial_temperature));
  }
  return b;
}

// ---- losses --------------------------------------------------------------------------

double ranking_loss(std::span<const double> scores, std::span<const std::uint8_t> labels, double margin) {
  check_labels(scores, labels, "ranking_loss");
  return ranking_row(scores, labels, margin, nullptr);
}

double bce_loss(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_labels(scores, labels, "bce_loss");
  if (scores.empty()) throw ValidationError("bce_loss: no classes");
  return bce_row(scores, labels, nullptr);
}

double asl_loss(std::span<const double> scores, std::span<const std::uint8_t> labels, double gamma_pos,
                double gamma_neg, double asl_margin) {
  check_labels(scores, labels, "asl_loss");
  if (scores.empty()) throw ValidationError("asl_loss: no classes");
  if (!(gamma_pos >= 0.0) || !(gamma_neg >= 0.0)) throw ValidationError("asl_loss: gammas must be >= 0");
  return asl_row(scores, labels, gamma_pos, gamma_neg, asl_margin, nullptr);
}

Var batch_loss(const Var& scores, std::span<const std::vector<std::uint8_t>> labels, const LossConfig& cfg) {
  const Tensor& s = scores.value();
  const std::size_t rows = s.rows(), cols = s.cols();
  if (labels.size() != rows)
    throw ValidationError("batch_loss: " + std::to_string(rows) + " score rows but " + std::to_string(labels.size()) +
                          " label rows");
  if (rows == 0 || cols == 0) throw ValidationError("batch_loss: empty score matrix");
  const bool need_grad = scores.requires_grad();
  Tensor g({rows, cols});
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<const double> row = s.data().subspan(r * cols, cols);
    check_labels(row, labels[r], "batch_loss");
    total += loss_row(row, labels[r], cfg, need_grad ? g.data().data() + r * cols : nullptr);
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  Tensor value = Tensor::scalar(total * inv_rows);
  if (!need_grad) return Var(std::move(value));
  for (double& v : g.data()) v *= inv_rows;
  return scores.tape()->record("batch_loss", std::move(value), {&scores},
                               [scores, g = std::move(g)](const Tensor& up, Tape& tape) {
                                 Tensor* dst = tape.grad_buffer(scores);
                                 const double u = up.item();
                                 auto d = dst->data();
                                 for (std::size_t i = 0; i < d.size(); ++i) d[i] += u * g.data()[i];
                               });
}

// ---- training ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("train: lr must be > 0");
  if (batch < 1) throw ValidationError("train: batch must be >= 1");
  if (!(init_stddev >= 0.0)) throw ValidationError("train: init_stddev must be >= 0");
}

namespace {

struct Batch {
  Tensor global;
  Tensor tokens;
  std::vector<Segment> segments;
  std::vector<std::vector<std::uint8_t>> labels;
};

Batch gather_batch(const FeatureCache& f, std::span<const std::vector<std::uint8_t>> labels,
                   std::span<const std::size_t> ids) {
  const std::size_t d = f.global.cols();
  std::size_t rows = 0;
  for (std::size_t i : ids) rows += f.segments[i].length;
  Batch b{Tensor({ids.size(), d}), Tensor({rows, d}), {}, {}};
  std::size_t at = 0;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const std::size_t i = ids[k];
    std::copy_n(f.global.data().begin() + static_cast<std::ptrdiff_t>(i * d), d,
                b.global.data().begin() + static_cast<std::ptrdiff_t>(k * d));
    const Segment& s = f.segments[i];
    std::copy_n(f.tokens.data().begin() + static_cast<std::ptrdiff_t>(s.offset * d), s.length * d,
                b.tokens.data().begin() + static_cast<std::ptrdiff_t>(at * d));
    b.segments.push_back({at, s.length});
    at += s.length;
    b.labels.push_back(labels[i]);
  }
  return b;
}

}  // namespace

Var prompt_objective(const Var& global, const Var& tokens, std::span<const Segment> segments,
                     std::span<const std::vector<std::uint8_t>> labels, const PromptSet& prompts,
                     const DualEncoder& enc, const Var& global_context, const Var* local_context,
                     const LossConfig& loss) {
  Var p = scale(matmul_nt(global, embed(prompts, enc, global_context)), loss.scale);
  Var l = batch_loss(p, labels, loss);
  if (local_context == nullptr) return l;
  Var dense = matmul_nt(tokens, embed(prompts, enc, *local_context));
  Var p_agg = scale(segment_softmax_pool(dense, segments, loss.spatial_temperature), loss.scale);
  return add(l, batch_loss(p_agg, labels, loss));
}

TrainResult train_on_features(const FeatureCache& features, std::span<const std::vector<std::uint8_t>> labels,
                              const DualEncoder& enc, PromptSet prompts, const LossConfig& loss,
                              const TrainConfig& cfg, PromptMode mode) {
  loss.validate();
  cfg.validate();
  const std::size_t n = features.global.rows();
  if (n == 0) throw ValidationError("train: empty training set");
  if (labels.size() != n || features.segments.size() != n)
    throw ValidationError("train: " + std::to_string(n) + " samples but " + std::to_string(labels.size()) +
                          " label vectors");
  for (const auto& y : labels)
    if (y.size() != prompts.num_classes())
      throw ValidationError("train: label length " + std::to_string(y.size()) + " != " +
                            std::to_string(prompts.num_classes()) + " classes");
  if (features.global.cols() != enc.config.out_dim)
    throw ValidationError("train: feature dim does not match the encoder");

  const bool dpt = mode == PromptMode::kDoubleGrained;
  prompts.merge_weight = dpt ? 0.5 : 1.0;
  const std::size_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  OptimState opt{cfg.lr, std::max<std::size_t>(1, cfg.epochs * steps_per_epoch), 0};
  Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * cfg.batch;
      const std::size_t count = std::min(cfg.batch, n - begin);
      Batch b = gather_batch(features, labels, std::span(order).subspan(begin, count));

      Tape tape;
      Var gctx = tape.leaf(prompts.global_context);
      Var lctx = dpt ? tape.leaf(prompts.local_context) : Var();
      Var l = prompt_objective(Var(std::move(b.global)), Var(std::move(b.tokens)), b.segments, b.labels, prompts, enc,
                               gctx, dpt ? &lctx : nullptr, loss);
      tape.backward(l);
      total += l.value().item() * static_cast<double>(count);

      std::vector<Tensor*> params{&prompts.global_context};
      std::vector<Tensor> grads{*tape.grad(gctx)};
      if (dpt) {
        params.push_back(&prompts.local_context);
        grads.push_back(*tape.grad(lctx));
      }
      sgd_step(params, grads, opt);
    }
    result.epoch_loss.push_back(total / static_cast<double>(n));
  }
  result.prompts = std::move(prompts);
  return result;
}

TrainResult train_prompts(std::span<const text::PseudoLabeledText> texts, const DualEncoder& enc, PromptSet prompts,
                          const LossConfig& loss, const TrainConfig& cfg, PromptMode mode) {
  if (texts.empty()) throw ValidationError("train_prompts: empty corpus");
  std::vector<std::vector<std::size_t>> seqs;
  std::vector<std::vector<std::uint8_t>> labels;
  for (const auto& t : texts) {
    seqs.push_back(enc.vocab.encode(t.text, enc.config.max_text_len, true));
    labels.push_back(t.labels);
  }
  return train_on_features(enc::encode_texts(enc, seqs), labels, enc, std::move(prompts), loss, cfg, mode);
}

TrainResult train_prompts_from_images(std::span<const Tensor* const> images,
                                      std::span<const std::vector<std::uint8_t>> labels, const DualEncoder& enc,
                                      PromptSet prompts, const LossConfig& loss, const TrainConfig& cfg,
                                      PromptMode mode) {
  if (images.empty()) throw ValidationError("train_prompts_from_images: no images");
  return train_on_features(enc::encode_images(enc, images), labels, enc, std::move(prompts), loss, cfg, mode);
}

}  // namespace tai::train
