// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Miniature dual encoder: a word-level text transformer and a patch
// transformer for images, both ending in a single-head attention readout whose
// value vectors, pushed through the shared output projection, form the dense
// features. The pooled vector is therefore a convex mix of the dense rows,
// which is what lets per-token and per-patch features live in the same space
// as the global ones.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tai/gradcore.hpp"

namespace tai::enc {

using grad::Segment;
using grad::Tensor;
using grad::Var;

struct EncoderConfig {
  std::size_t embed_dim = 64;
  std::size_t out_dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t max_text_len = 32;
  std::size_t grid_h = 8;
  std::size_t grid_w = 8;
  std::size_t patch_dim = 16;
  std::size_t mlp_hidden = 128;
  /// Side of the square patch windows that image self-attention is confined
  /// to; 0 attends across the whole grid.
  std::size_t attn_window = 2;

  std::size_t patches() const { return grid_h * grid_w; }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Lowercases and splits on anything that is not [a-z0-9].
std::vector<std::string> split_words(std::string_view text);

class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kSos = 1;
  static constexpr std::size_t kEos = 2;
  static constexpr std::size_t kUnk = 3;
  static constexpr std::size_t kContextBase = 4;

  Vocab() = default;
  /// Words are deduplicated; ids follow the special tokens and context slots.
  Vocab(const std::vector<std::string>& words, std::size_t context_slots);

  std::size_t size() const { return tokens_.size(); }
  std::size_t context_slots() const { return context_slots_; }
  std::size_t context_id(std::size_t slot) const;
  bool is_context(std::size_t id) const { return id >= kContextBase && id < kContextBase + context_slots_; }

  std::optional<std::size_t> find(std::string_view word) const;
  std::size_t id_or_unk(std::string_view word) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Word ids for free text; unknown words map to UNK.
  std::vector<std::size_t> words(std::string_view text) const;
  /// [SOS, words..., EOS]. Overlong text is truncated when allowed, otherwise rejected.
  std::vector<std::size_t> encode(std::string_view text, std::size_t max_len, bool truncate) const;

  /// Rebuilds from an id-ordered token list (as stored in checkpoints).
  static Vocab from_tokens(std::vector<std::string> tokens);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t context_slots_ = 0;
};

/// Named parameter tensors, in registration order.
class ParamStore {
 public:
  std::shared_ptr<Tensor> add(std::string name, Tensor init);
  std::shared_ptr<Tensor> get(std::string_view name) const;
  const std::vector<std::pair<std::string, std::shared_ptr<Tensor>>>& entries() const { return entries_; }
  /// Deep copy; the new store shares no tensors with this one.
  ParamStore clone() const;

 private:
  std::vector<std::pair<std::string, std::shared_ptr<Tensor>>> entries_;
};

/// Turns parameters into Vars: tape leaves when training, shared constants otherwise.
class Binder {
 public:
  explicit Binder(grad::Tape* tape = nullptr) : tape_(tape) {}
  Var operator()(const std::shared_ptr<Tensor>& param);
  /// (param, leaf) pairs bound so far, in first-use order.
  const std::vector<std::pair<std::shared_ptr<Tensor>, Var>>& bound() const { return bound_; }

 private:
  grad::Tape* tape_;
  std::vector<std::pair<std::shared_ptr<Tensor>, Var>> bound_;
  std::map<const Tensor*, std::size_t> index_;
};

/// Batched encoder output. Rows of `global` are per sequence/image; `tokens`
/// stacks every sequence's dense rows, delimited by `segments`. Both are unit-norm.
struct Features {
  Var global;
  Var tokens;
  std::vector<Segment> segments;
};

/// Single-input view: global ∈ R^D, sequence ∈ R^{N×D}.
struct EncoderOutputs {
  Tensor global;
  Tensor sequence;
};

struct Block {
  std::shared_ptr<Tensor> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct ReadoutHead {
  std::shared_ptr<Tensor> ln_g, ln_b, wq, bq, wk, bk, wv, bv, proj;
};

class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const EncoderConfig& cfg, std::size_t vocab_size, grad::Rng& rng);
  /// Rebinds to tensors already present in `store` (checkpoint load).
  TextEncoder(const EncoderConfig& cfg, ParamStore store);

  /// Each sequence must start with SOS and hold exactly one EOS; PAD may only
  /// follow EOS and is dropped. Context placeholder ids read rows of `context`.
  Features forward(std::span<const std::vector<std::size_t>> sequences, Binder& bind,
                   const Var* context = nullptr) const;

  EncoderOutputs encode(std::span<const std::size_t> ids) const;

  const ParamStore& params() const { return store_; }
  std::size_t vocab_size() const;

 private:
  void bind_tensors();

  EncoderConfig cfg_;
  ParamStore store_;
  std::shared_ptr<Tensor> tok_emb_, pos_emb_;
  std::vector<Block> blocks_;
  ReadoutHead head_;
};

class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const EncoderConfig& cfg, grad::Rng& rng);
  ImageEncoder(const EncoderConfig& cfg, ParamStore store);

  /// Each image is an (H·W)×patch_dim tensor in row-major grid order.
  Features forward(std::span<const Tensor* const> images, Binder& bind) const;

  EncoderOutputs encode(const Tensor& image) const;

  const ParamStore& params() const { return store_; }

 private:
  void bind_tensors();

  EncoderConfig cfg_;
  ParamStore store_;
  std::shared_ptr<Tensor> patch_w_, patch_b_, pos_emb_;
  std::vector<Block> blocks_;
  ReadoutHead head_;
};

struct DualEncoder {
  EncoderConfig config;
  Vocab vocab;
  TextEncoder text;
  ImageEncoder image;

  /// Every parameter, prefixed "text." / "image.", in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
};

DualEncoder make_dual_encoder(const EncoderConfig& cfg, Vocab vocab, std::uint64_t seed);

/// Fixed-size value arrays of encoded features, used to cache frozen outputs.
struct FeatureCache {
  Tensor global;                  // n × D
  Tensor tokens;                  // Σ N_i × D
  std::vector<Segment> segments;  // one per input
};

FeatureCache encode_texts(const DualEncoder& enc, std::span<const std::vector<std::size_t>> sequences,
                          std::size_t chunk = 256);
FeatureCache encode_images(const DualEncoder& enc, std::span<const Tensor* const> images, std::size_t chunk = 64);

// ---- synthetic world ------------------------------------------------------

struct ObjectBlock {
  std::size_t cls = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  bool contains(std::size_t r, std::size_t c) const {
    return r >= row && r < row + height && c >= col && c < col + width;
  }
  bool operator==(const ObjectBlock&) const = default;
};

struct Scene {
  bool test = false;
  std::vector<ObjectBlock> objects;
  std::vector<std::uint8_t> labels;
  std::string caption;
  Tensor patches;  // (H·W) × patch_dim
};

struct WorldConfig {
  std::uint64_t seed = 7;
  std::size_t classes = 10;
  std::size_t train_pairs = 2000;
  std::size_t test_images = 500;
  std::size_t grid_h = 8;
  std::size_t grid_w = 8;
  std::size_t patch_dim = 16;
  /// Text-only sentences (including distractors with no class word).
  std::size_t corpus_sentences = 2000;
  double object_noise = 0.5;
  double background_noise = 0.25;
  void validate() const;
};

struct SyntheticWorld {
  WorldConfig config;
  std::vector<std::string> class_names;
  std::vector<std::vector<std::string>> synonyms;
  std::vector<Scene> scenes;  // train scenes first, then test scenes
  std::vector<std::string> corpus;

  std::size_t num_classes() const { return class_names.size(); }
  std::vector<std::size_t> split(bool test) const;
};

/// Largest supported class count.
std::size_t class_pool_size();

SyntheticWorld generate_world(const WorldConfig& cfg);

/// Writes world.json, patches.bin, captions.txt, corpus.txt and synonyms.txt.
void save_world(const SyntheticWorld& world, const std::filesystem::path& dir);
SyntheticWorld load_world(const std::filesystem::path& dir);

/// Vocabulary covering captions, corpus, class names/synonyms and the built-in prompt templates.
Vocab build_vocab(const SyntheticWorld& world, const EncoderConfig& cfg);

// ---- contrastive pretraining ------------------------------------------------

struct PretrainConfig {
  std::size_t epochs = 24;
  std::size_t batch = 32;
  double temperature = 0.07;
  /// Adam step size, cosine-annealed.
  double lr = 1e-3;
  std::uint64_t seed = 7;
  /// Global gradient-norm bound; 0 disables clipping.
  double grad_clip = 0.0;
  void validate() const;
};

struct InfoNce {
  Var text_to_image;
  Var image_to_text;
};

/// Cross-entropy of the B×B logit matrix against the diagonal, in both directions.
InfoNce info_nce(const Var& text_global, const Var& image_global, double temperature);

struct PretrainResult {
  DualEncoder encoder;
  std::vector<double> epoch_loss;
};

PretrainResult contrastive_pretrain(const SyntheticWorld& world, const EncoderConfig& cfg, const PretrainConfig& pcfg);

/// Caption→image retrieval accuracy by global cosine over consecutive batches
/// of `batch` scenes. A hit is an image whose label set equals the caption's.
double retrieval_accuracy(const DualEncoder& enc, const SyntheticWorld& world, std::span<const std::size_t> scenes,
                          std::size_t batch);

}  // namespace tai::enc
