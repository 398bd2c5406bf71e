// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tai/dualenc.hpp"
#include "tai/error.hpp"

namespace tai::enc {

using namespace tai::grad;

void PretrainConfig::validate() const {
  if (batch < 2) throw ValidationError("pretrain: batch must be >= 2");
  if (!(temperature > 0.0)) throw ValidationError("pretrain: temperature must be > 0");
  if (!(lr > 0.0)) throw ValidationError("pretrain: lr must be > 0");
  if (!(grad_clip >= 0.0)) throw ValidationError("pretrain: grad_clip must be >= 0 (0 disables)");
}

namespace {

Var diagonal_nll(const Var& logits) {
  const std::size_t n = logits.value().rows();
  std::vector<std::size_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = i * n + i;
  return scale(sum(gather(log_softmax(logits), diag)), -1.0 / static_cast<double>(n));
}

}  // namespace

InfoNce info_nce(const Var& text_global, const Var& image_global, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("info_nce: temperature must be > 0");
  if (text_global.value().rows() != image_global.value().rows())
    throw ValidationError("info_nce: " + std::to_string(text_global.value().rows()) + " texts vs " +
                          std::to_string(image_global.value().rows()) + " images");
  Var logits = scale(matmul_nt(text_global, image_global), 1.0 / temperature);
  return {diagonal_nll(logits), diagonal_nll(transpose(logits))};
}

PretrainResult contrastive_pretrain(const SyntheticWorld& world, const EncoderConfig& cfg, const PretrainConfig& pcfg) {
  pcfg.validate();
  const auto train = world.split(false);
  if (train.empty()) throw ValidationError("pretrain: world has no training scenes");
  if (pcfg.batch > train.size())
    throw ValidationError("pretrain: batch " + std::to_string(pcfg.batch) + " exceeds " +
                          std::to_string(train.size()) + " training pairs");
  if (cfg.grid_h != world.config.grid_h || cfg.grid_w != world.config.grid_w ||
      cfg.patch_dim != world.config.patch_dim)
    throw ValidationError("pretrain: encoder grid does not match the world");

  PretrainResult result{make_dual_encoder(cfg, build_vocab(world, cfg), pcfg.seed), {}};
  DualEncoder& enc = result.encoder;

  std::vector<std::vector<std::size_t>> captions(world.scenes.size());
  for (std::size_t i : train) captions[i] = enc.vocab.encode(world.scenes[i].caption, cfg.max_text_len, true);

  const std::size_t steps_per_epoch = train.size() / pcfg.batch;
  AdamState opt;
  opt.schedule = {pcfg.lr, std::max<std::size_t>(1, pcfg.epochs * steps_per_epoch), 0};
  Rng rng(pcfg.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order = train;

  for (std::size_t epoch = 0; epoch < pcfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<std::vector<std::size_t>> texts;
      std::vector<const Tensor*> images;
      for (std::size_t b = 0; b < pcfg.batch; ++b) {
        const std::size_t idx = order[s * pcfg.batch + b];
        texts.push_back(captions[idx]);
        images.push_back(&world.scenes[idx].patches);
      }
      Tape tape;
      Binder bind(&tape);
      Features tf = enc.text.forward(texts, bind);
      Features imf = enc.image.forward(images, bind);
      InfoNce l = info_nce(tf.global, imf.global, pcfg.temperature);
      Var loss = scale(add(l.text_to_image, l.image_to_text), 0.5);
      tape.backward(loss);
      total += loss.value().item();

      std::vector<Tensor*> params;
      std::vector<Tensor> grads;
      double sq = 0.0;
      for (const auto& [param, leaf] : bind.bound()) {
        params.push_back(param.get());
        grads.push_back(*tape.grad(leaf));
        for (double g : grads.back().data()) sq += g * g;
      }
      const double norm = std::sqrt(sq);
      if (pcfg.grad_clip > 0.0 && norm > pcfg.grad_clip)
        for (auto& g : grads)
          for (double& v : g.data()) v *= pcfg.grad_clip / norm;
      adam_step(params, grads, opt);
    }
    result.epoch_loss.push_back(total / static_cast<double>(steps_per_epoch));
  }
  // Keep weights representable in single precision so checkpoints round-trip.
  for (auto* store : {&enc.text.params(), &enc.image.params()})
    for (const auto& [name, p] : store->entries())
      for (double& v : p->data()) v = static_cast<double>(static_cast<float>(v));
  return result;
}

double retrieval_accuracy(const DualEncoder& enc, const SyntheticWorld& world, std::span<const std::size_t> scenes,
                          std::size_t batch) {
  if (batch < 1 || scenes.size() < batch) throw ValidationError("retrieval_accuracy: not enough scenes for a batch");
  std::vector<std::vector<std::size_t>> texts;
  std::vector<const Tensor*> images;
  for (std::size_t i : scenes) {
    texts.push_back(enc.vocab.encode(world.scenes[i].caption, enc.config.max_text_len, true));
    images.push_back(&world.scenes[i].patches);
  }
  const FeatureCache tc = encode_texts(enc, texts);
  const FeatureCache ic = encode_images(enc, images);
  const std::size_t d = enc.config.out_dim;
  std::size_t hits = 0, total = 0;
  for (std::size_t start = 0; start + batch <= scenes.size(); start += batch) {
    for (std::size_t t = start; t < start + batch; ++t) {
      std::size_t best = start;
      double best_sim = -2.0;
      for (std::size_t im = start; im < start + batch; ++im) {
        double sim = 0.0;
        for (std::size_t k = 0; k < d; ++k) sim += tc.global(t, k) * ic.global(im, k);
        if (sim > best_sim) best_sim = sim, best = im;
      }
      hits += world.scenes[scenes[best]].labels == world.scenes[scenes[t]].labels;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace tai::enc
