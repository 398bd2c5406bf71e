// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include "tai/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tai/error.hpp"
#include "tai/templates.hpp"

namespace tai::exp {

using grad::Tensor;
using nlohmann::json;

namespace {

// Reads an object while tracking which keys were consumed, so leftovers can be
// reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!j_.at(key).is_number_unsigned()) throw ValidationError("");
      }
      out = j_.at(key).get<T>();
    } catch (const std::exception&) {
      throw ValidationError("config: '" + name(key) + "' has the wrong type (" + j_.at(key).dump() + ")");
    }
  }

  Section sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, name(key));
  }

  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.contains(it.key())) throw ValidationError("config: unknown key '" + name(it.key()) + "'");
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_train(Section s, train::TrainConfig& t) {
  s.get("epochs", t.epochs);
  s.get("lr", t.lr);
  s.get("batch", t.batch);
  s.get("init_stddev", t.init_stddev);
  s.finish();
}

json train_json(const train::TrainConfig& t) {
  return {{"epochs", t.epochs}, {"lr", t.lr}, {"batch", t.batch}, {"init_stddev", t.init_stddev}};
}

template <typename F>
void keyed(const std::string& key, F&& check) {
  try {
    check();
  } catch (const ValidationError& e) {
    throw ValidationError("config '" + key + "': " + e.what());
  }
}

double map_of(const Tensor& scores, const TestSet& test, const std::vector<std::string>& names) {
  return eval::evaluate(scores, test.labels, names).map;
}

}  // namespace

void Config::validate() const {
  keyed("world", [&] { world.validate(); });
  keyed("encoder", [&] { encoder.validate(); });
  keyed("pretrain", [&] { pretrain.validate(); });
  keyed("loss", [&] { loss.validate(); });
  keyed("train", [&] { train.validate(); });
  keyed("image_train.train", [&] { image_train.train.validate(); });
  keyed("eval", [&] { eval.validate(); });
  if (context_length < 1) throw ValidationError("config 'prompts.context_length': M must be >= 1");
  if (context_length + 3 > encoder.max_text_len)
    throw ValidationError("config 'prompts.context_length': M leaves no room for a class name within " +
                          std::to_string(encoder.max_text_len) + " tokens");
  if (!(ensemble_lambda >= 0.0 && ensemble_lambda <= 1.0))
    throw ValidationError("config 'eval.lambda': must be in [0, 1]");
  if (image_train.shots < 1) throw ValidationError("config 'image_train.shots': must be >= 1");
  keyed("image_train.mode", [&] { parse_mode(image_train.mode); });
  for (const auto& t : templates)
    if (t.find(kClassPlaceholder) == std::string::npos)
      throw ValidationError("config 'templates': \"" + t + "\" has no [CLASS] placeholder");
  if (encoder.grid_h != world.grid_h || encoder.grid_w != world.grid_w || encoder.patch_dim != world.patch_dim)
    throw ValidationError("config 'encoder': grid and patch_dim must match 'world'");
}

void Config::apply_seed(std::uint64_t s) {
  seed = s;
  world.seed = s;
  pretrain.seed = s + 1;
  train.seed = s + 2;
  image_train.train.seed = s + 3;
}

Config parse_config(std::string_view text, std::string_view source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string(source) + ": " + e.what());
  }
  Config c;
  try {
    Section root(j, "");
    std::uint64_t seed = c.seed;
    root.get("seed", seed);
    {
      Section w = root.sub("world");
      w.get("classes", c.world.classes);
      w.get("train_pairs", c.world.train_pairs);
      w.get("test_images", c.world.test_images);
      w.get("grid_h", c.world.grid_h);
      w.get("grid_w", c.world.grid_w);
      w.get("patch_dim", c.world.patch_dim);
      w.get("corpus_sentences", c.world.corpus_sentences);
      w.get("object_noise", c.world.object_noise);
      w.get("background_noise", c.world.background_noise);
      w.finish();
    }
    {
      Section e = root.sub("encoder");
      e.get("embed_dim", c.encoder.embed_dim);
      e.get("out_dim", c.encoder.out_dim);
      e.get("layers", c.encoder.layers);
      e.get("heads", c.encoder.heads);
      e.get("max_text_len", c.encoder.max_text_len);
      e.get("mlp_hidden", c.encoder.mlp_hidden);
      e.get("attn_window", c.encoder.attn_window);
      e.finish();
    }
    {
      Section p = root.sub("pretrain");
      p.get("epochs", c.pretrain.epochs);
      p.get("batch", c.pretrain.batch);
      p.get("temperature", c.pretrain.temperature);
      p.get("lr", c.pretrain.lr);
      p.get("grad_clip", c.pretrain.grad_clip);
      p.finish();
    }
    {
      Section p = root.sub("prompts");
      p.get("context_length", c.context_length);
      p.finish();
    }
    {
      Section l = root.sub("loss");
      std::string kind = train::to_string(c.loss.kind);
      l.get("kind", kind);
      keyed("loss.kind", [&] { c.loss.kind = train::parse_loss_kind(kind); });
      l.get("margin", c.loss.margin);
      l.get("scale", c.loss.scale);
      l.get("gamma_pos", c.loss.gamma_pos);
      l.get("gamma_neg", c.loss.gamma_neg);
      l.get("asl_margin", c.loss.asl_margin);
      l.get("softmax_temperature", c.loss.softmax_temperature);
      l.get("spatial_temperature", c.loss.spatial_temperature);
      l.finish();
    }
    read_train(root.sub("train"), c.train);
    {
      Section it = root.sub("image_train");
      it.get("shots", c.image_train.shots);
      it.get("mode", c.image_train.mode);
      read_train(it.sub("train"), c.image_train.train);
      it.finish();
    }
    {
      Section e = root.sub("eval");
      e.get("merge_weight", c.eval.merge_weight);
      e.get("lambda", c.ensemble_lambda);
      e.finish();
    }
    root.get("templates", c.templates);
    root.get("ablation_counts", c.ablation_counts);
    root.finish();
    c.apply_seed(seed);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(source) + ": " + e.what());
  }
  c.encoder.grid_h = c.world.grid_h;
  c.encoder.grid_w = c.world.grid_w;
  c.encoder.patch_dim = c.world.patch_dim;
  c.eval.spatial_temperature = c.loss.spatial_temperature;
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(source) + ": " + e.what());
  }
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string to_json(const Config& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["world"] = {{"classes", c.world.classes},
                {"train_pairs", c.world.train_pairs},
                {"test_images", c.world.test_images},
                {"grid_h", c.world.grid_h},
                {"grid_w", c.world.grid_w},
                {"patch_dim", c.world.patch_dim},
                {"corpus_sentences", c.world.corpus_sentences},
                {"object_noise", c.world.object_noise},
                {"background_noise", c.world.background_noise}};
  j["encoder"] = {{"embed_dim", c.encoder.embed_dim}, {"out_dim", c.encoder.out_dim},
                  {"layers", c.encoder.layers},       {"heads", c.encoder.heads},
                  {"max_text_len", c.encoder.max_text_len}, {"mlp_hidden", c.encoder.mlp_hidden},
                  {"attn_window", c.encoder.attn_window}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"batch", c.pretrain.batch},
                   {"temperature", c.pretrain.temperature},
                   {"lr", c.pretrain.lr},
                   {"grad_clip", c.pretrain.grad_clip}};
  j["prompts"] = {{"context_length", c.context_length}};
  j["loss"] = {{"kind", train::to_string(c.loss.kind)},
               {"margin", c.loss.margin},
               {"scale", c.loss.scale},
               {"gamma_pos", c.loss.gamma_pos},
               {"gamma_neg", c.loss.gamma_neg},
               {"asl_margin", c.loss.asl_margin},
               {"softmax_temperature", c.loss.softmax_temperature},
               {"spatial_temperature", c.loss.spatial_temperature}};
  j["train"] = train_json(c.train);
  j["image_train"] = {{"shots", c.image_train.shots}, {"mode", c.image_train.mode},
                      {"train", train_json(c.image_train.train)}};
  j["eval"] = {{"merge_weight", c.eval.merge_weight}, {"lambda", c.ensemble_lambda}};
  j["templates"] = c.templates;
  j["ablation_counts"] = c.ablation_counts;
  return j.dump(2) + "\n";
}

void apply_seed_env(Config& cfg) {
  const char* env = std::getenv("TAI_SEED");
  if (env == nullptr || *env == '\0') return;
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(env, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || env[used] != '\0' || env[0] == '-')
    throw ValidationError("TAI_SEED must be a non-negative integer, got '" + std::string(env) + "'");
  cfg.apply_seed(v);
}

std::vector<std::string> load_templates(const std::filesystem::path& path) {
  std::vector<std::string> out;
  for (auto& line : text::read_lines(path)) {
    if (line.empty() || line.front() == '#') continue;
    out.push_back(std::move(line));
  }
  return out;
}

train::PromptMode parse_mode(std::string_view mode) {
  if (mode == "tai") return train::PromptMode::kGlobalOnly;
  if (mode == "tai-dpt") return train::PromptMode::kDoubleGrained;
  throw ValidationError("unknown prompt mode '" + std::string(mode) + "' (expected tai or tai-dpt)");
}

std::vector<text::PseudoLabeledText> build_text_corpus(const enc::SyntheticWorld& world, const Config& cfg) {
  text::SynonymDictionary dict{world.class_names, world.synonyms};
  auto out = text::filter_corpus(world.corpus, dict);
  std::vector<std::string> templates = cfg.templates;
  if (templates.empty()) templates.assign(kHandCraftedTemplates.begin(), kHandCraftedTemplates.end());
  auto injected = text::inject_templates(dict, templates);
  out.insert(out.end(), injected.begin(), injected.end());
  return out;
}

train::PromptSet fresh_prompts(const Config& cfg, const enc::DualEncoder& enc,
                               const std::vector<std::string>& class_names) {
  return train::init_prompts(cfg.context_length, enc, class_names, cfg.train.seed, cfg.train.init_stddev);
}

train::TrainResult train_text_prompts(const Config& cfg, const enc::DualEncoder& enc,
                                      std::span<const text::PseudoLabeledText> texts,
                                      const std::vector<std::string>& class_names, train::PromptMode mode) {
  return train::train_prompts(texts, enc, fresh_prompts(cfg, enc, class_names), cfg.loss, cfg.train, mode);
}

std::vector<std::size_t> few_shot_scenes(const enc::SyntheticWorld& world, std::size_t shots) {
  std::vector<std::size_t> chosen;
  std::vector<bool> taken(world.scenes.size(), false);
  const auto train = world.split(false);
  for (std::size_t c = 0; c < world.num_classes(); ++c) {
    std::size_t got = 0;
    for (std::size_t i : train) {
      if (got == shots) break;
      if (!world.scenes[i].labels[c] || taken[i]) continue;
      taken[i] = true;
      chosen.push_back(i);
      ++got;
    }
  }
  return chosen;
}

train::TrainResult train_image_prompts(const Config& cfg, const enc::DualEncoder& enc,
                                       const enc::SyntheticWorld& world) {
  std::vector<const Tensor*> images;
  std::vector<std::vector<std::uint8_t>> labels;
  for (std::size_t i : few_shot_scenes(world, cfg.image_train.shots)) {
    images.push_back(&world.scenes[i].patches);
    labels.push_back(world.scenes[i].labels);
  }
  auto prompts = train::init_prompts(cfg.context_length, enc, world.class_names, cfg.image_train.train.seed,
                                     cfg.image_train.train.init_stddev);
  return train::train_prompts_from_images(images, labels, enc, std::move(prompts), cfg.loss, cfg.image_train.train,
                                          parse_mode(cfg.image_train.mode));
}

TestSet encode_test_set(const enc::DualEncoder& enc, const enc::SyntheticWorld& world) {
  TestSet t;
  t.scenes = world.split(true);
  std::vector<const Tensor*> images;
  for (std::size_t i : t.scenes) {
    images.push_back(&world.scenes[i].patches);
    t.labels.push_back(world.scenes[i].labels);
  }
  t.features = enc::encode_images(enc, images);
  return t;
}

Tensor score_test_set(const Config& cfg, const enc::DualEncoder& enc, const TestSet& test,
                      const train::PromptSet& prompts) {
  eval::EvalConfig ec = cfg.eval;
  ec.merge_weight = prompts.merge_weight;
  return eval::score_features(test.features, train::compute_class_embeddings(prompts, enc), ec);
}

Tensor zero_shot_test_set(const Config& cfg, const enc::DualEncoder& enc, const TestSet& test,
                          const std::vector<std::string>& class_names) {
  return eval::score_features(test.features, eval::template_embeddings(enc, class_names, kZeroShotTemplate),
                              cfg.eval);
}

double localisation_rate(const enc::DualEncoder& enc, const enc::SyntheticWorld& world, const TestSet& test,
                         const train::PromptSet& prompts) {
  const auto emb = train::compute_class_embeddings(prompts, enc);
  const std::size_t gw = world.config.grid_w;
  std::size_t inside = 0, total = 0;
  for (std::size_t k = 0; k < test.scenes.size(); ++k) {
    const auto& seg = test.features.segments[k];
    const std::size_t d = test.features.tokens.cols();
    Tensor dense({seg.length, d},
                 std::vector<double>(test.features.tokens.data().begin() + static_cast<std::ptrdiff_t>(seg.offset * d),
                                     test.features.tokens.data().begin() +
                                         static_cast<std::ptrdiff_t>((seg.offset + seg.length) * d)));
    const Tensor P = eval::correlation_map(dense, emb);
    for (const auto& obj : world.scenes[test.scenes[k]].objects) {
      const auto row = P.row(obj.cls);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      inside += obj.contains(best / gw, best % gw);
      ++total;
    }
  }
  return total ? static_cast<double>(inside) / static_cast<double>(total) : 0.0;
}

std::vector<AblationPoint> ablate_corpus_size(const Config& cfg, const enc::DualEncoder& enc,
                                              const enc::SyntheticWorld& world,
                                              std::span<const text::PseudoLabeledText> sentences) {
  if (sentences.empty()) throw ValidationError("ablation: no sentences");
  std::vector<text::PseudoLabeledText> pool(sentences.begin(), sentences.end());
  grad::Rng rng(cfg.seed ^ 0xA5A5A5A5ULL);
  std::shuffle(pool.begin(), pool.end(), rng);

  text::SynonymDictionary dict{world.class_names, world.synonyms};
  std::vector<std::string> templates = cfg.templates;
  if (templates.empty()) templates.assign(kHandCraftedTemplates.begin(), kHandCraftedTemplates.end());
  const auto injected = text::inject_templates(dict, templates);
  const TestSet test = encode_test_set(enc, world);

  std::vector<std::size_t> counts = cfg.ablation_counts;
  counts.push_back(pool.size());
  std::sort(counts.begin(), counts.end());
  counts.erase(std::unique(counts.begin(), counts.end()), counts.end());

  std::vector<AblationPoint> out;
  for (std::size_t n : counts) {
    if (n > pool.size()) continue;
    std::vector<text::PseudoLabeledText> subset(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
    subset.insert(subset.end(), injected.begin(), injected.end());
    auto r = train_text_prompts(cfg, enc, subset, world.class_names, train::PromptMode::kDoubleGrained);
    out.push_back({n, map_of(score_test_set(cfg, enc, test, r.prompts), test, world.class_names)});
  }
  return out;
}

std::string format_ablation_csv(const std::vector<AblationPoint>& points) {
  std::string out = "texts,mAP\n";
  for (const auto& p : points) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", p.texts, p.map);
    out += buf;
  }
  return out;
}

RunSummary run_pipeline(Config cfg, const std::function<void(const RunArtifacts&)>& after) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  RunSummary s;
  s.seed = cfg.seed;
  const auto world = enc::generate_world(cfg.world);
  const auto pre = enc::contrastive_pretrain(world, cfg.encoder, cfg.pretrain);
  const auto& enc = pre.encoder;
  const auto test = encode_test_set(enc, world);
  s.retrieval = enc::retrieval_accuracy(enc, world, test.scenes, 32);

  const auto texts = build_text_corpus(world, cfg);
  const auto tai = train_text_prompts(cfg, enc, texts, world.class_names, train::PromptMode::kGlobalOnly);
  const auto dpt = train_text_prompts(cfg, enc, texts, world.class_names, train::PromptMode::kDoubleGrained);
  const auto img = train_image_prompts(cfg, enc, world);

  const Tensor dpt_scores = score_test_set(cfg, enc, test, dpt.prompts);
  const Tensor img_scores = score_test_set(cfg, enc, test, img.prompts);
  s.zero_shot = map_of(zero_shot_test_set(cfg, enc, test, world.class_names), test, world.class_names);
  s.tai = map_of(score_test_set(cfg, enc, test, tai.prompts), test, world.class_names);
  s.tai_dpt = map_of(dpt_scores, test, world.class_names);
  s.image = map_of(img_scores, test, world.class_names);
  s.ensemble = map_of(eval::ensemble_scores(dpt_scores, img_scores, cfg.ensemble_lambda), test, world.class_names);
  s.ensemble_lambda0 = map_of(eval::ensemble_scores(dpt_scores, img_scores, 0.0), test, world.class_names);
  s.ensemble_lambda1 = map_of(eval::ensemble_scores(dpt_scores, img_scores, 1.0), test, world.class_names);
  s.localisation = localisation_rate(enc, world, test, dpt.prompts);
  s.dpt_epoch_loss = dpt.epoch_loss;
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (after) after(RunArtifacts{world, enc, texts});
  return s;
}

}  // namespace tai::exp
