// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include "tai/dualenc.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "tai/error.hpp"

namespace tai::enc {

using namespace tai::grad;

void EncoderConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("encoder config: " + what);
  };
  need(embed_dim > 0 && out_dim > 0 && layers > 0 && mlp_hidden > 0, "dimensions must be positive");
  need(heads > 0 && embed_dim % heads == 0, "heads must divide embed_dim");
  need(max_text_len >= 4, "max_text_len must be at least 4");
  need(grid_h > 0 && grid_w > 0 && patch_dim > 0, "grid and patch_dim must be positive");
  need(attn_window == 0 || (grid_h % attn_window == 0 && grid_w % attn_window == 0),
       "attn_window must divide both grid dimensions");
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) && c < 128) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ---- Vocab ----------------------------------------------------------------

Vocab::Vocab(const std::vector<std::string>& words, std::size_t context_slots) : context_slots_(context_slots) {
  tokens_ = {"<pad>", "<sos>", "<eos>", "<unk>"};
  for (std::size_t i = 0; i < context_slots; ++i) tokens_.push_back("<ctx" + std::to_string(i) + ">");
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
  for (const auto& w : words) {
    if (w.empty() || index_.contains(w)) continue;
    index_.emplace(w, tokens_.size());
    tokens_.push_back(w);
  }
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kContextBase || tokens[kPad] != "<pad>" || tokens[kSos] != "<sos>" ||
      tokens[kEos] != "<eos>" || tokens[kUnk] != "<unk>")
    throw ValidationError("vocab: missing special tokens");
  std::size_t slots = 0;
  while (kContextBase + slots < tokens.size() && tokens[kContextBase + slots] == "<ctx" + std::to_string(slots) + ">")
    ++slots;
  std::vector<std::string> words(tokens.begin() + static_cast<std::ptrdiff_t>(kContextBase + slots), tokens.end());
  Vocab v(words, slots);
  if (v.tokens_ != tokens) throw ValidationError("vocab: duplicate tokens");
  return v;
}

std::size_t Vocab::context_id(std::size_t slot) const {
  if (slot >= context_slots_)
    throw ValidationError("vocab: context slot " + std::to_string(slot) + " exceeds " +
                          std::to_string(context_slots_) + " placeholders");
  return kContextBase + slot;
}

std::optional<std::size_t> Vocab::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocab::id_or_unk(std::string_view word) const { return find(word).value_or(kUnk); }

std::vector<std::size_t> Vocab::words(std::string_view text) const {
  std::vector<std::size_t> ids;
  for (const auto& w : split_words(text)) ids.push_back(id_or_unk(w));
  return ids;
}

std::vector<std::size_t> Vocab::encode(std::string_view text, std::size_t max_len, bool truncate) const {
  auto body = words(text);
  if (body.empty()) throw ValidationError("vocab: text has no tokens: \"" + std::string(text) + "\"");
  if (body.size() + 2 > max_len) {
    if (!truncate)
      throw ValidationError("vocab: " + std::to_string(body.size() + 2) + " tokens exceed limit " +
                            std::to_string(max_len));
    body.resize(max_len - 2);
  }
  std::vector<std::size_t> ids{kSos};
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(kEos);
  return ids;
}

// ---- parameters -------------------------------------------------------------

std::shared_ptr<Tensor> ParamStore::add(std::string name, Tensor init) {
  if (get(name)) throw std::logic_error("duplicate parameter " + name);
  auto p = std::make_shared<Tensor>(std::move(init));
  entries_.emplace_back(std::move(name), p);
  return p;
}

std::shared_ptr<Tensor> ParamStore::get(std::string_view name) const {
  for (const auto& [n, p] : entries_)
    if (n == name) return p;
  return nullptr;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [n, p] : entries_) out.add(n, *p);
  return out;
}

Var Binder::operator()(const std::shared_ptr<Tensor>& param) {
  auto it = index_.find(param.get());
  if (it != index_.end()) return bound_[it->second].second;
  Var v = tape_ ? tape_->leaf(std::shared_ptr<const Tensor>(param)) : Var(std::shared_ptr<const Tensor>(param));
  index_.emplace(param.get(), bound_.size());
  bound_.emplace_back(param, v);
  return v;
}

namespace {

// Parameters are kept representable in single precision so a checkpoint
// round-trip reproduces them exactly.
Tensor rounded(Tensor t) {
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  return t;
}

Tensor gaussian(Shape shape, Rng& rng, double stddev) { return rounded(Tensor::randn(std::move(shape), rng, stddev)); }

Tensor ones(std::size_t n) {
  Tensor t({1, n});
  std::fill(t.data().begin(), t.data().end(), 1.0);
  return t;
}

Tensor zeros(std::size_t n) { return Tensor({1, n}); }

std::shared_ptr<Tensor> require(const ParamStore& store, const std::string& name, const Shape& shape) {
  auto p = store.get(name);
  if (!p) throw ValidationError("encoder: missing parameter " + name);
  if (p->shape() != shape)
    throw ValidationError("encoder: parameter " + name + " has shape " + shape_str(p->shape()) + ", expected " +
                          shape_str(shape));
  return p;
}

void init_block(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.embed_dim;
  const std::size_t h = cfg.mlp_hidden;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double depth = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.layers));
  store.add(prefix + "ln1_g", ones(d));
  store.add(prefix + "ln1_b", zeros(d));
  store.add(prefix + "wq", gaussian({d, d}, rng, sd));
  store.add(prefix + "bq", zeros(d));
  store.add(prefix + "wk", gaussian({d, d}, rng, sd));
  store.add(prefix + "bk", zeros(d));
  store.add(prefix + "wv", gaussian({d, d}, rng, sd));
  store.add(prefix + "bv", zeros(d));
  store.add(prefix + "wo", gaussian({d, d}, rng, sd * depth));
  store.add(prefix + "bo", zeros(d));
  store.add(prefix + "ln2_g", ones(d));
  store.add(prefix + "ln2_b", zeros(d));
  store.add(prefix + "w1", gaussian({d, h}, rng, sd));
  store.add(prefix + "b1", zeros(h));
  store.add(prefix + "w2", gaussian({h, d}, rng, depth / std::sqrt(static_cast<double>(h))));
  store.add(prefix + "b2", zeros(d));
}

Block bind_block(const ParamStore& store, const std::string& prefix, const EncoderConfig& cfg) {
  const std::size_t d = cfg.embed_dim;
  const std::size_t h = cfg.mlp_hidden;
  Block b;
  b.ln1_g = require(store, prefix + "ln1_g", {1, d});
  b.ln1_b = require(store, prefix + "ln1_b", {1, d});
  b.wq = require(store, prefix + "wq", {d, d});
  b.bq = require(store, prefix + "bq", {1, d});
  b.wk = require(store, prefix + "wk", {d, d});
  b.bk = require(store, prefix + "bk", {1, d});
  b.wv = require(store, prefix + "wv", {d, d});
  b.bv = require(store, prefix + "bv", {1, d});
  b.wo = require(store, prefix + "wo", {d, d});
  b.bo = require(store, prefix + "bo", {1, d});
  b.ln2_g = require(store, prefix + "ln2_g", {1, d});
  b.ln2_b = require(store, prefix + "ln2_b", {1, d});
  b.w1 = require(store, prefix + "w1", {d, h});
  b.b1 = require(store, prefix + "b1", {1, h});
  b.w2 = require(store, prefix + "w2", {h, d});
  b.b2 = require(store, prefix + "b2", {1, d});
  return b;
}

void init_head(ParamStore& store, const EncoderConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.embed_dim;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  store.add("head.ln_g", ones(d));
  store.add("head.ln_b", zeros(d));
  store.add("head.wq", gaussian({d, d}, rng, sd));
  store.add("head.bq", zeros(d));
  store.add("head.wk", gaussian({d, d}, rng, sd));
  store.add("head.bk", zeros(d));
  store.add("head.wv", gaussian({d, d}, rng, sd));
  store.add("head.bv", zeros(d));
  store.add("head.proj", gaussian({d, cfg.out_dim}, rng, sd));
}

ReadoutHead bind_head(const ParamStore& store, const EncoderConfig& cfg) {
  const std::size_t d = cfg.embed_dim;
  ReadoutHead h;
  h.ln_g = require(store, "head.ln_g", {1, d});
  h.ln_b = require(store, "head.ln_b", {1, d});
  h.wq = require(store, "head.wq", {d, d});
  h.bq = require(store, "head.bq", {1, d});
  h.wk = require(store, "head.wk", {d, d});
  h.bk = require(store, "head.bk", {1, d});
  h.wv = require(store, "head.wv", {d, d});
  h.bv = require(store, "head.bv", {1, d});
  h.proj = require(store, "head.proj", {d, cfg.out_dim});
  return h;
}

Var affine_norm(const Var& x, const std::shared_ptr<Tensor>& g, const std::shared_ptr<Tensor>& b, Binder& bind) {
  return add_row(mul_row(layer_norm(x), bind(g)), bind(b));
}

// Pre-norm residual block: x + attn(ln(x)), then x + mlp(ln(x)).
Var block_forward(const Block& b, Var x, std::span<const Segment> segs, std::size_t heads, Binder& bind) {
  Var h = affine_norm(x, b.ln1_g, b.ln1_b, bind);
  Var q = linear(h, bind(b.wq), bind(b.bq));
  Var k = linear(h, bind(b.wk), bind(b.bk));
  Var v = linear(h, bind(b.wv), bind(b.bv));
  Var a = segment_attention(q, k, v, segs, segs, heads);
  x = add(x, linear(a, bind(b.wo), bind(b.bo)));
  Var h2 = affine_norm(x, b.ln2_g, b.ln2_b, bind);
  return add(x, linear(gelu(linear(h2, bind(b.w1), bind(b.b1))), bind(b.w2), bind(b.b2)));
}

// Single-head attention readout. The query is either the EOS row of each
// sequence (text) or the mean of each image's patch rows. Dense features are
// the projected value rows, so the pooled vector is their attention-weighted mix.
Features readout(const ReadoutHead& hd, const Var& x, std::vector<Segment> segs,
                 const std::vector<std::size_t>* eos_rows, Binder& bind) {
  Var xf = affine_norm(x, hd.ln_g, hd.ln_b, bind);
  Var qsrc = eos_rows ? gather_rows(xf, *eos_rows) : segment_mean(xf, segs);
  Var q = linear(qsrc, bind(hd.wq), bind(hd.bq));
  Var k = linear(xf, bind(hd.wk), bind(hd.bk));
  Var v = linear(xf, bind(hd.wv), bind(hd.bv));
  std::vector<Segment> qsegs(segs.size());
  for (std::size_t s = 0; s < segs.size(); ++s) qsegs[s] = {s, 1};
  Var pooled = segment_attention(q, k, v, qsegs, segs, 1);
  Var proj = bind(hd.proj);
  Features f;
  f.global = l2_normalize(matmul(pooled, proj));
  f.tokens = l2_normalize(matmul(v, proj));
  f.segments = std::move(segs);
  return f;
}

EncoderOutputs single(const Features& f) {
  EncoderOutputs out;
  const Tensor& g = f.global.value();
  out.global = Tensor({g.cols()}, g.row(0));
  out.sequence = f.tokens.value();
  return out;
}

}  // namespace

// ---- text -------------------------------------------------------------------

TextEncoder::TextEncoder(const EncoderConfig& cfg, std::size_t vocab_size, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  store_.add("tok_emb", gaussian({vocab_size, cfg.embed_dim}, rng, 0.5));
  store_.add("pos_emb", gaussian({cfg.max_text_len, cfg.embed_dim}, rng, 0.1));
  for (std::size_t l = 0; l < cfg.layers; ++l) init_block(store_, "blocks." + std::to_string(l) + ".", cfg, rng);
  init_head(store_, cfg, rng);
  bind_tensors();
}

TextEncoder::TextEncoder(const EncoderConfig& cfg, ParamStore store) : cfg_(cfg), store_(std::move(store)) {
  cfg_.validate();
  bind_tensors();
}

void TextEncoder::bind_tensors() {
  auto tok = store_.get("tok_emb");
  if (!tok) throw ValidationError("encoder: missing parameter tok_emb");
  tok_emb_ = require(store_, "tok_emb", {tok->rows(), cfg_.embed_dim});
  pos_emb_ = require(store_, "pos_emb", {cfg_.max_text_len, cfg_.embed_dim});
  blocks_.clear();
  for (std::size_t l = 0; l < cfg_.layers; ++l)
    blocks_.push_back(bind_block(store_, "blocks." + std::to_string(l) + ".", cfg_));
  head_ = bind_head(store_, cfg_);
}

std::size_t TextEncoder::vocab_size() const { return tok_emb_->rows(); }

Features TextEncoder::forward(std::span<const std::vector<std::size_t>> sequences, Binder& bind,
                              const Var* context) const {
  if (sequences.empty()) throw ValidationError("encode_text: empty batch");
  const std::size_t vocab = vocab_size();
  std::vector<std::size_t> ids, positions, eos_rows;
  std::vector<Segment> segs;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw ValidationError("encode_text: empty token sequence");
    if (seq.front() != Vocab::kSos) throw ValidationError("encode_text: sequence must begin with SOS");
    auto eos = std::find(seq.begin(), seq.end(), Vocab::kEos);
    if (eos == seq.end()) throw ValidationError("encode_text: sequence has no EOS");
    if (std::find(eos + 1, seq.end(), Vocab::kEos) != seq.end())
      throw ValidationError("encode_text: sequence has more than one EOS");
    if (std::any_of(eos + 1, seq.end(), [](std::size_t t) { return t != Vocab::kPad; }))
      throw ValidationError("encode_text: only PAD may follow EOS");
    const auto len = static_cast<std::size_t>(eos - seq.begin()) + 1;
    if (len > cfg_.max_text_len)
      throw ValidationError("encode_text: length " + std::to_string(len) + " exceeds " +
                            std::to_string(cfg_.max_text_len));
    segs.push_back({ids.size(), len});
    for (std::size_t i = 0; i < len; ++i) {
      std::size_t t = seq[i];
      if (t >= vocab) throw ValidationError("encode_text: token id " + std::to_string(t) + " out of vocabulary");
      if (t == Vocab::kPad) throw ValidationError("encode_text: PAD before EOS");
      if (t >= Vocab::kContextBase && context != nullptr) {
        const std::size_t slot = t - Vocab::kContextBase;
        if (slot < context->value().rows()) t = vocab + slot;
      }
      ids.push_back(t);
      positions.push_back(i);
    }
    eos_rows.push_back(ids.size() - 1);
  }
  Var table = bind(tok_emb_);
  if (context != nullptr) {
    if (context->value().cols() != cfg_.embed_dim)
      throw ValidationError("encode_text: context width " + std::to_string(context->value().cols()) +
                            " != embed_dim " + std::to_string(cfg_.embed_dim));
    std::array<Var, 2> parts{table, *context};
    table = concat_rows(parts);
  }
  Var x = add(gather_rows(table, ids), gather_rows(bind(pos_emb_), positions));
  for (const Block& b : blocks_) x = block_forward(b, x, segs, cfg_.heads, bind);
  return readout(head_, x, std::move(segs), &eos_rows, bind);
}

EncoderOutputs TextEncoder::encode(std::span<const std::size_t> ids) const {
  Binder bind;
  std::vector<std::vector<std::size_t>> batch{std::vector<std::size_t>(ids.begin(), ids.end())};
  return single(forward(batch, bind));
}

// ---- image ------------------------------------------------------------------

ImageEncoder::ImageEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  store_.add("patch_w", gaussian({cfg.patch_dim, cfg.embed_dim}, rng, 1.0 / std::sqrt(static_cast<double>(cfg.patch_dim))));
  store_.add("patch_b", zeros(cfg.embed_dim));
  store_.add("pos_emb", gaussian({cfg.patches(), cfg.embed_dim}, rng, 0.1));
  for (std::size_t l = 0; l < cfg.layers; ++l) init_block(store_, "blocks." + std::to_string(l) + ".", cfg, rng);
  init_head(store_, cfg, rng);
  bind_tensors();
}

ImageEncoder::ImageEncoder(const EncoderConfig& cfg, ParamStore store) : cfg_(cfg), store_(std::move(store)) {
  cfg_.validate();
  bind_tensors();
}

void ImageEncoder::bind_tensors() {
  patch_w_ = require(store_, "patch_w", {cfg_.patch_dim, cfg_.embed_dim});
  patch_b_ = require(store_, "patch_b", {1, cfg_.embed_dim});
  pos_emb_ = require(store_, "pos_emb", {cfg_.patches(), cfg_.embed_dim});
  blocks_.clear();
  for (std::size_t l = 0; l < cfg_.layers; ++l)
    blocks_.push_back(bind_block(store_, "blocks." + std::to_string(l) + ".", cfg_));
  head_ = bind_head(store_, cfg_);
}

Features ImageEncoder::forward(std::span<const Tensor* const> images, Binder& bind) const {
  if (images.empty()) throw ValidationError("encode_image: empty batch");
  const std::size_t n = cfg_.patches();
  const std::size_t p = cfg_.patch_dim;
  const Shape want{n, p};
  // Patches enter the tower grouped by attention window; `order[k]` is the
  // grid index of the k-th row within an image.
  const std::size_t win = cfg_.attn_window;
  std::vector<std::size_t> order;
  if (win == 0) {
    for (std::size_t j = 0; j < n; ++j) order.push_back(j);
  } else {
    for (std::size_t wr = 0; wr < cfg_.grid_h; wr += win)
      for (std::size_t wc = 0; wc < cfg_.grid_w; wc += win)
        for (std::size_t r = wr; r < wr + win; ++r)
          for (std::size_t c = wc; c < wc + win; ++c) order.push_back(r * cfg_.grid_w + c);
  }
  const std::size_t group = win == 0 ? n : win * win;

  Tensor stacked({images.size() * n, p});
  std::vector<Segment> segs, windows;
  std::vector<std::size_t> positions, restore(images.size() * n);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->shape() != want)
      throw ValidationError("encode_image: expected patch grid " + shape_str(want) + " (" +
                            std::to_string(cfg_.grid_h) + "x" + std::to_string(cfg_.grid_w) + " patches of " +
                            std::to_string(p) + "), got " + shape_str(images[i]->shape()));
    for (std::size_t k = 0; k < n; ++k) {
      std::copy_n(images[i]->data().begin() + static_cast<std::ptrdiff_t>(order[k] * p), p,
                  stacked.data().begin() + static_cast<std::ptrdiff_t>((i * n + k) * p));
      positions.push_back(order[k]);
      restore[i * n + order[k]] = i * n + k;
    }
    segs.push_back({i * n, n});
    for (std::size_t k = 0; k < n; k += group) windows.push_back({i * n + k, group});
  }
  Var x = add(linear(Var(std::move(stacked)), bind(patch_w_), bind(patch_b_)), gather_rows(bind(pos_emb_), positions));
  for (const Block& b : blocks_) x = block_forward(b, x, windows, cfg_.heads, bind);
  if (win != 0) x = gather_rows(x, restore);
  return readout(head_, x, std::move(segs), nullptr, bind);
}

EncoderOutputs ImageEncoder::encode(const Tensor& image) const {
  Binder bind;
  const Tensor* one[] = {&image};
  return single(forward(one, bind));
}

// ---- dual -------------------------------------------------------------------

std::vector<std::pair<std::string, Tensor>> DualEncoder::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [n, p] : text.params().entries()) out.emplace_back("text." + n, *p);
  for (const auto& [n, p] : image.params().entries()) out.emplace_back("image." + n, *p);
  return out;
}

DualEncoder make_dual_encoder(const EncoderConfig& cfg, Vocab vocab, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  DualEncoder enc;
  enc.config = cfg;
  enc.text = TextEncoder(cfg, vocab.size(), rng);
  enc.image = ImageEncoder(cfg, rng);
  enc.vocab = std::move(vocab);
  return enc;
}

namespace {

struct CacheBuilder {
  std::size_t dim;
  std::vector<double> global, tokens;
  std::vector<Segment> segments;

  void append(const Features& f) {
    const std::size_t base = tokens.size() / dim;
    const auto& g = f.global.value().data();
    const auto& t = f.tokens.value().data();
    global.insert(global.end(), g.begin(), g.end());
    tokens.insert(tokens.end(), t.begin(), t.end());
    for (const Segment& s : f.segments) segments.push_back({base + s.offset, s.length});
  }

  FeatureCache finish() {
    FeatureCache c;
    const std::size_t n = global.size() / dim, t = tokens.size() / dim;
    c.global = Tensor({n, dim}, std::move(global));
    c.tokens = Tensor({t, dim}, std::move(tokens));
    c.segments = std::move(segments);
    return c;
  }
};

}  // namespace

FeatureCache encode_texts(const DualEncoder& enc, std::span<const std::vector<std::size_t>> sequences,
                          std::size_t chunk) {
  CacheBuilder b{enc.config.out_dim, {}, {}, {}};
  for (std::size_t i = 0; i < sequences.size(); i += chunk) {
    Binder bind;
    b.append(enc.text.forward(sequences.subspan(i, std::min(chunk, sequences.size() - i)), bind));
  }
  return b.finish();
}

FeatureCache encode_images(const DualEncoder& enc, std::span<const Tensor* const> images, std::size_t chunk) {
  CacheBuilder b{enc.config.out_dim, {}, {}, {}};
  for (std::size_t i = 0; i < images.size(); i += chunk) {
    Binder bind;
    b.append(enc.image.forward(images.subspan(i, std::min(chunk, images.size() - i)), bind));
  }
  return b.finish();
}

}  // namespace tai::enc
