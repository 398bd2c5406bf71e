// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include "tai/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "tai/error.hpp"

namespace tai::io {

using grad::Tensor;

namespace {

constexpr std::string_view kMagic = "TAIC";
constexpr std::string_view kVocabPrefix = "vocab:";
constexpr std::string_view kClassPrefix = "class_name:";

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string_view source) : bytes_(bytes), source_(source) {}

  std::uint32_t u32(std::string_view what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[at_ + b])) << (8 * b);
    at_ += 4;
    return v;
  }

  std::string_view take(std::size_t n, std::string_view what) {
    need(n, what);
    auto s = bytes_.substr(at_, n);
    at_ += n;
    return s;
  }

  std::size_t offset() const { return at_; }
  bool done() const { return at_ == bytes_.size(); }

  [[noreturn]] void fail(const std::string& why, std::size_t offset) const {
    throw IoError(std::string(source_) + ": " + why + " at byte offset " + std::to_string(offset));
  }

 private:
  void need(std::size_t n, std::string_view what) const {
    if (bytes_.size() - at_ < n)
      fail("truncated " + std::string(what) + " (need " + std::to_string(n) + " bytes, " +
               std::to_string(bytes_.size() - at_) + " left)",
           at_);
  }

  std::string_view bytes_;
  std::string_view source_;
  std::size_t at_ = 0;
};

Tensor scalar_entry(double v) { return Tensor({}, {v}); }

const Tensor* find(const std::vector<NamedTensor>& entries, std::string_view name) {
  for (const auto& e : entries)
    if (e.name == name) return &e.value;
  return nullptr;
}

std::size_t as_index(const Tensor& t, const std::string& what) {
  if (t.size() != 1) throw ValidationError(what + " must be a scalar");
  const double v = t.data()[0];
  if (!(v >= 0.0) || v != std::floor(v)) throw ValidationError(what + " is not a valid index");
  return static_cast<std::size_t>(v);
}

}  // namespace

std::string serialize_checkpoint(const std::vector<NamedTensor>& entries) {
  std::string out(kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : e.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

std::vector<NamedTensor> parse_checkpoint(std::string_view bytes, std::string_view source) {
  Reader r(bytes, source);
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic)
    r.fail("bad magic (expected \"TAIC\")", 0);
  r.take(kMagic.size(), "magic");
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    r.fail("checkpoint version " + std::to_string(version) + " is not supported (this build reads version " +
               std::to_string(kCheckpointVersion) + ")",
           version_at);
  const std::uint32_t count = r.u32("entry count");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t entry_at = r.offset();
    const std::uint32_t name_len = r.u32("name length");
    NamedTensor e;
    e.name = std::string(r.take(name_len, "name"));
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) r.fail("entry '" + e.name + "' has implausible rank " + std::to_string(rank), entry_at);
    grad::Shape shape;
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(r.u32("dimension"));
      n *= shape.back();
    }
    if (n > (bytes.size() - r.offset()) / 4)
      r.fail("truncated values of '" + e.name + "' (need " + std::to_string(n * 4) + " bytes)", r.offset());
    std::vector<double> vals(n);
    for (auto& v : vals) v = static_cast<double>(std::bit_cast<float>(r.u32("value")));
    e.value = Tensor(std::move(shape), std::move(vals));
    out.push_back(std::move(e));
  }
  if (!r.done()) r.fail("trailing bytes after " + std::to_string(count) + " entries", r.offset());
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  const std::string bytes = serialize_checkpoint(entries);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path.string());
}

// ---- encoder ---------------------------------------------------------------------

std::vector<NamedTensor> encoder_entries(const enc::DualEncoder& enc, std::span<const std::string> class_names) {
  const auto& c = enc.config;
  std::vector<NamedTensor> out;
  out.push_back({"meta.encoder",
                 Tensor({10}, {double(c.embed_dim), double(c.out_dim), double(c.layers), double(c.heads),
                               double(c.max_text_len), double(c.grid_h), double(c.grid_w), double(c.patch_dim),
                               double(c.mlp_hidden), double(c.attn_window)})});
  const auto& toks = enc.vocab.tokens();
  for (std::size_t i = 0; i < toks.size(); ++i)
    out.push_back({std::string(kVocabPrefix) + toks[i], scalar_entry(static_cast<double>(i))});
  for (auto& [name, t] : enc.named_tensors()) out.push_back({name, t});
  for (std::size_t i = 0; i < class_names.size(); ++i)
    out.push_back({std::string(kClassPrefix) + class_names[i], scalar_entry(static_cast<double>(i))});
  return out;
}

enc::DualEncoder encoder_from_entries(const std::vector<NamedTensor>& entries) {
  const Tensor* meta = find(entries, "meta.encoder");
  if (!meta || meta->size() != 10) throw ValidationError("encoder checkpoint: missing or malformed meta.encoder");
  auto m = meta->data();
  enc::EncoderConfig cfg;
  std::size_t* fields[] = {&cfg.embed_dim, &cfg.out_dim, &cfg.layers,  &cfg.heads,     &cfg.max_text_len,
                           &cfg.grid_h,    &cfg.grid_w,  &cfg.patch_dim, &cfg.mlp_hidden, &cfg.attn_window};
  for (std::size_t i = 0; i < 10; ++i) *fields[i] = as_index(Tensor({}, {m[i]}), "meta.encoder field");

  std::map<std::size_t, std::string> vocab;
  enc::ParamStore text, image;
  for (const auto& e : entries) {
    if (e.name.starts_with(kVocabPrefix)) {
      const std::size_t id = as_index(e.value, "vocabulary id of '" + e.name + "'");
      if (!vocab.emplace(id, e.name.substr(kVocabPrefix.size())).second)
        throw ValidationError("encoder checkpoint: duplicate vocabulary id " + std::to_string(id));
    } else if (e.name.starts_with("text.")) {
      text.add(e.name.substr(5), e.value);
    } else if (e.name.starts_with("image.")) {
      image.add(e.name.substr(6), e.value);
    } else if (e.name != "meta.encoder" && !e.name.starts_with(kClassPrefix)) {
      throw ValidationError("encoder checkpoint: unexpected entry '" + e.name + "'");
    }
  }
  std::vector<std::string> tokens;
  for (auto& [id, tok] : vocab) {
    if (id != tokens.size()) throw ValidationError("encoder checkpoint: vocabulary ids are not dense");
    tokens.push_back(tok);
  }
  enc::DualEncoder out;
  out.config = cfg;
  out.vocab = enc::Vocab::from_tokens(std::move(tokens));
  out.text = enc::TextEncoder(cfg, std::move(text));
  out.image = enc::ImageEncoder(cfg, std::move(image));
  if (out.text.vocab_size() != out.vocab.size())
    throw ValidationError("encoder checkpoint: embedding table has " + std::to_string(out.text.vocab_size()) +
                          " rows for " + std::to_string(out.vocab.size()) + " tokens");
  return out;
}

std::vector<std::string> class_names_from_entries(const std::vector<NamedTensor>& entries) {
  std::map<std::size_t, std::string> names;
  for (const auto& e : entries)
    if (e.name.starts_with(kClassPrefix) &&
        !names.emplace(as_index(e.value, "class index"), e.name.substr(kClassPrefix.size())).second)
      throw ValidationError("checkpoint: duplicate class index in '" + e.name + "'");
  std::vector<std::string> ordered;
  for (auto& [i, n] : names) {
    if (i != ordered.size()) throw ValidationError("checkpoint: class indices are not dense");
    ordered.push_back(n);
  }
  return ordered;
}

// ---- prompts -----------------------------------------------------------------------

std::vector<NamedTensor> prompt_entries(const train::PromptSet& prompts) {
  std::vector<NamedTensor> out;
  out.push_back({"global_context", prompts.global_context});
  out.push_back({"local_context", prompts.local_context});
  out.push_back({"meta.merge_weight", scalar_entry(prompts.merge_weight)});
  for (std::size_t i = 0; i < prompts.class_names.size(); ++i)
    out.push_back({std::string(kClassPrefix) + prompts.class_names[i], scalar_entry(static_cast<double>(i))});
  return out;
}

train::PromptSet prompts_from_entries(const std::vector<NamedTensor>& entries, const enc::DualEncoder& enc) {
  const Tensor* g = find(entries, "global_context");
  const Tensor* l = find(entries, "local_context");
  const Tensor* w = find(entries, "meta.merge_weight");
  if (!g || !l || !w) throw ValidationError("prompt checkpoint: needs global_context, local_context and meta.merge_weight");
  if (g->shape() != l->shape() || g->rank() != 2 || g->cols() != enc.config.embed_dim)
    throw ValidationError("prompt checkpoint: context shapes " + grad::shape_str(g->shape()) + " / " +
                          grad::shape_str(l->shape()) + " do not fit embed_dim " +
                          std::to_string(enc.config.embed_dim));
  const auto ordered = class_names_from_entries(entries);
  if (ordered.empty()) throw ValidationError("prompt checkpoint: no class_name entries");
  train::PromptSet p = train::init_prompts(g->rows(), enc, ordered, 0, 0.0);
  p.global_context = *g;
  p.local_context = *l;
  p.merge_weight = w->item();
  return p;
}

}  // namespace tai::io
