// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tai/dualenc.hpp"
#include "tai/error.hpp"
#include "tai/nounfilter.hpp"
#include "tai/templates.hpp"

namespace tai::enc {

using grad::Rng;

namespace {

struct ClassDef {
  std::string_view name;
  std::vector<std::string_view> synonyms;
};

// Class order is the label order; a world with C classes uses the first C.
const std::vector<ClassDef>& pool() {
  static const std::vector<ClassDef> classes = {
      {"person", {"person", "people", "man", "woman", "human"}},
      {"dog", {"dog", "puppy", "pup", "doggy"}},
      {"car", {"car", "taxi", "automobile"}},
      {"bicycle", {"bicycle", "bike", "cycle"}},
      {"cat", {"cat", "kitten", "kitty"}},
      {"boat", {"boat", "raft", "dinghy"}},
      {"bird", {"bird", "sparrow", "parrot"}},
      {"cell phone", {"cell phone", "cellphone", "mobile phone", "smartphone"}},
      {"horse", {"horse", "pony", "stallion"}},
      {"bus", {"bus", "minibus", "school bus"}},
      {"chair", {"chair", "stool", "armchair"}},
      {"sheep", {"sheep", "lamb", "ram"}},
      {"cow", {"cow", "cattle", "calf"}},
      {"airplane", {"airplane", "plane", "aeroplane", "jet"}},
      {"train", {"train", "locomotive", "tram"}},
      {"bottle", {"bottle", "flask"}},
      {"television", {"television", "tv", "monitor"}},
      {"laptop", {"laptop", "notebook computer"}},
      {"couch", {"couch", "sofa", "settee"}},
      {"potted plant", {"potted plant", "houseplant"}},
  };
  return classes;
}

const std::vector<std::string_view> kIntros = {
    "there is", "i can see", "a picture of", "this scene shows", "here we have", "look at",
    "an image with", "we spotted", "in this view there is", "someone photographed",
};

const std::vector<std::string_view> kEndings = {
    "", "", "", "in the park", "on the street", "near the house", "by the water",
    "at night", "in the morning", "on a sunny day", "inside the room",
};

const std::vector<std::string_view> kDistractors = {
    "the sky is clear today",
    "it was a long day at work",
    "nothing much happened this morning",
    "the weather is nice and warm",
    "we walked along the road for hours",
    "a quiet evening in the kitchen",
    "the room is empty and dark",
    "everything looks calm in the field",
    "the light is soft near the window",
    "a cold wind blows over the hill",
};

// Words that never take an article or a plural in captions.
const std::set<std::string_view> kMassNouns = {"people", "cattle", "sheep"};

std::string pluralize(std::string_view phrase) {
  std::string p(phrase);
  const auto sp = p.rfind(' ');
  std::string head = sp == std::string::npos ? "" : p.substr(0, sp + 1);
  std::string w = sp == std::string::npos ? p : p.substr(sp + 1);
  auto ends = [&](std::string_view s) { return w.size() >= s.size() && w.compare(w.size() - s.size(), s.size(), s) == 0; };
  if (w == "calf") return head + "calves";
  if (ends("s") || ends("x") || ends("ch") || ends("sh")) return head + w + "es";
  if (ends("y") && w.size() > 1 && std::string_view("aeiou").find(w[w.size() - 2]) == std::string_view::npos)
    return head + w.substr(0, w.size() - 1) + "ies";
  return head + w + "s";
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

// A mention renders one synonym with an article or count. Plural forms are only
// used when the lemmatizer maps them back, so captions and pseudo-labels agree.
std::string mention(std::string_view syn, Rng& rng) {
  std::string s(syn);
  if (kMassNouns.contains(syn)) return (std::uniform_int_distribution<int>(0, 1)(rng) ? "some " : "the ") + s;
  const int form = std::uniform_int_distribution<int>(0, 5)(rng);
  if (form == 0) {
    std::string pl = pluralize(s);
    if (text::lemmatize_text(pl) == text::lemmatize_text(s)) return "two " + pl;
  }
  if (form == 1) return "the " + s;
  const bool vowel = std::string_view("aeiou").find(s.front()) != std::string_view::npos;
  return (vowel ? "an " : "a ") + s;
}

std::string caption_for(const std::vector<std::size_t>& classes, const std::vector<std::vector<std::string>>& syns,
                        Rng& rng) {
  std::vector<std::size_t> order = classes;
  std::shuffle(order.begin(), order.end(), rng);
  std::string out(pick(kIntros, rng));
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0) out += (i + 1 == order.size()) ? " and" : ",";
    out += " " + mention(pick(syns[order[i]], rng), rng);
  }
  const auto& ending = pick(kEndings, rng);
  if (!ending.empty()) out += " " + std::string(ending);
  return out;
}

std::vector<std::size_t> sample_classes(std::size_t num_classes, Rng& rng) {
  const std::size_t k = std::uniform_int_distribution<std::size_t>(1, std::min<std::size_t>(4, num_classes))(rng);
  std::vector<std::size_t> all(num_classes);
  for (std::size_t i = 0; i < num_classes; ++i) all[i] = i;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(k);
  return all;
}

float round_f(double v) { return static_cast<float>(v); }

// Places each class as a non-overlapping block. The first class is drawn larger
// so every multi-object scene has a dominant object.
std::vector<ObjectBlock> place_objects(const std::vector<std::size_t>& classes, std::size_t gh, std::size_t gw,
                                       Rng& rng) {
  std::vector<ObjectBlock> blocks;
  std::vector<bool> taken(gh * gw, false);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const std::size_t lo = i == 0 ? 2 : 1;
    const std::size_t hi = i == 0 ? 4 : 2;
    bool placed = false;
    for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
      // Shrink towards 1x1 as attempts accumulate.
      const std::size_t cap = attempt < 200 ? hi : 1;
      std::size_t h = std::min({std::uniform_int_distribution<std::size_t>(lo, hi)(rng), cap, gh});
      std::size_t w = std::min({std::uniform_int_distribution<std::size_t>(lo, hi)(rng), cap, gw});
      std::size_t r = std::uniform_int_distribution<std::size_t>(0, gh - h)(rng);
      std::size_t c = std::uniform_int_distribution<std::size_t>(0, gw - w)(rng);
      bool free = true;
      for (std::size_t y = r; y < r + h && free; ++y)
        for (std::size_t x = c; x < c + w && free; ++x) free = !taken[y * gw + x];
      if (!free) continue;
      for (std::size_t y = r; y < r + h; ++y)
        for (std::size_t x = c; x < c + w; ++x) taken[y * gw + x] = true;
      blocks.push_back({classes[i], r, c, h, w});
      placed = true;
    }
    if (!placed) throw ValidationError("generate_world: grid too small to place " + std::to_string(classes.size()) + " objects");
  }
  return blocks;
}

grad::Tensor render(const std::vector<ObjectBlock>& blocks, const grad::Tensor& prototypes, const WorldConfig& cfg,
                    Rng& rng) {
  const std::size_t n = cfg.grid_h * cfg.grid_w;
  const std::size_t p = cfg.patch_dim;
  grad::Tensor out({n, p});
  std::normal_distribution<double> bg(0.0, cfg.background_noise);
  std::normal_distribution<double> obj(0.0, cfg.object_noise);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) out(i, j) = bg(rng);
  for (const auto& b : blocks)
    for (std::size_t y = b.row; y < b.row + b.height; ++y)
      for (std::size_t x = b.col; x < b.col + b.width; ++x)
        for (std::size_t j = 0; j < p; ++j) out(y * cfg.grid_w + x, j) = prototypes(b.cls, j) + obj(rng);
  for (double& v : out.data()) v = round_f(v);
  return out;
}

}  // namespace

std::size_t class_pool_size() { return pool().size(); }

void WorldConfig::validate() const {
  if (classes < 2) throw ValidationError("world: classes must be >= 2, got " + std::to_string(classes));
  if (classes > class_pool_size())
    throw ValidationError("world: at most " + std::to_string(class_pool_size()) + " classes are available");
  if (train_pairs < 1 || test_images < 1) throw ValidationError("world: scene counts must be >= 1");
  if (grid_h < 2 || grid_w < 2 || patch_dim < 1) throw ValidationError("world: grid must be at least 2x2");
  if (!(object_noise >= 0.0) || !(background_noise >= 0.0)) throw ValidationError("world: noise must be >= 0");
}

std::vector<std::size_t> SyntheticWorld::split(bool test) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    if (scenes[i].test == test) out.push_back(i);
  return out;
}

SyntheticWorld generate_world(const WorldConfig& cfg) {
  cfg.validate();
  SyntheticWorld w;
  w.config = cfg;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    w.class_names.emplace_back(pool()[c].name);
    w.synonyms.emplace_back(pool()[c].synonyms.begin(), pool()[c].synonyms.end());
  }

  // Independent streams so changing one count does not reshuffle the others.
  Rng proto_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 1);
  Rng scene_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 2);
  Rng corpus_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 3);

  grad::Tensor prototypes = grad::Tensor::randn({cfg.classes, cfg.patch_dim}, proto_rng, 1.0);

  const std::size_t total = cfg.train_pairs + cfg.test_images;
  w.scenes.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    Scene s;
    s.test = i >= cfg.train_pairs;
    auto classes = sample_classes(cfg.classes, scene_rng);
    s.objects = place_objects(classes, cfg.grid_h, cfg.grid_w, scene_rng);
    s.labels.assign(cfg.classes, 0);
    for (std::size_t c : classes) s.labels[c] = 1;
    s.caption = caption_for(classes, w.synonyms, scene_rng);
    s.patches = render(s.objects, prototypes, cfg, scene_rng);
    w.scenes.push_back(std::move(s));
  }

  std::bernoulli_distribution distract(0.15);
  for (std::size_t i = 0; i < cfg.corpus_sentences; ++i) {
    if (distract(corpus_rng)) {
      std::string s(pick(kDistractors, corpus_rng));
      w.corpus.push_back(s);
    } else {
      w.corpus.push_back(caption_for(sample_classes(cfg.classes, corpus_rng), w.synonyms, corpus_rng));
    }
  }
  return w;
}

// ---- persistence ---------------------------------------------------------------

namespace {

void write_text(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << body;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string lines_of(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += s + "\n";
  return out;
}

}  // namespace

void save_world(const SyntheticWorld& world, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const auto& cfg = world.config;
  nlohmann::ordered_json j;
  j["format"] = 1;
  j["config"] = {{"seed", cfg.seed},
                 {"classes", cfg.classes},
                 {"train_pairs", cfg.train_pairs},
                 {"test_images", cfg.test_images},
                 {"grid_h", cfg.grid_h},
                 {"grid_w", cfg.grid_w},
                 {"patch_dim", cfg.patch_dim},
                 {"corpus_sentences", cfg.corpus_sentences},
                 {"object_noise", cfg.object_noise},
                 {"background_noise", cfg.background_noise}};
  j["classes"] = world.class_names;
  j["synonyms"] = world.synonyms;
  auto scenes = nlohmann::ordered_json::array();
  for (const auto& s : world.scenes) {
    nlohmann::ordered_json sj;
    sj["split"] = s.test ? "test" : "train";
    std::vector<std::size_t> pos;
    for (std::size_t c = 0; c < s.labels.size(); ++c)
      if (s.labels[c]) pos.push_back(c);
    sj["labels"] = pos;
    auto objs = nlohmann::ordered_json::array();
    for (const auto& o : s.objects)
      objs.push_back({{"class", o.cls}, {"row", o.row}, {"col", o.col}, {"height", o.height}, {"width", o.width}});
    sj["objects"] = objs;
    scenes.push_back(sj);
  }
  j["scenes"] = scenes;
  write_text(dir / "world.json", j.dump(1) + "\n");

  std::string bin;
  bin.reserve(world.scenes.size() * cfg.grid_h * cfg.grid_w * cfg.patch_dim * 4);
  for (const auto& s : world.scenes)
    for (double v : s.patches.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int b = 0; b < 4; ++b) bin.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  write_text(dir / "patches.bin", bin);

  std::vector<std::string> captions;
  for (const auto& s : world.scenes) captions.push_back(s.caption);
  write_text(dir / "captions.txt", lines_of(captions));
  write_text(dir / "corpus.txt", lines_of(world.corpus));

  text::SynonymDictionary dict{world.class_names, world.synonyms};
  write_text(dir / "synonyms.txt", text::format_synonyms(dict));
}

SyntheticWorld load_world(const std::filesystem::path& dir) {
  std::ifstream in(dir / "world.json", std::ios::binary);
  if (!in) throw IoError("cannot open " + (dir / "world.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "world.json").string() + ": " + e.what());
  }
  SyntheticWorld w;
  try {
    if (j.at("format").get<int>() != 1)
      throw IoError((dir / "world.json").string() + ": unsupported format " + j.at("format").dump());
    const auto& c = j.at("config");
    auto& cfg = w.config;
    cfg.seed = c.at("seed").get<std::uint64_t>();
    cfg.classes = c.at("classes").get<std::size_t>();
    cfg.train_pairs = c.at("train_pairs").get<std::size_t>();
    cfg.test_images = c.at("test_images").get<std::size_t>();
    cfg.grid_h = c.at("grid_h").get<std::size_t>();
    cfg.grid_w = c.at("grid_w").get<std::size_t>();
    cfg.patch_dim = c.at("patch_dim").get<std::size_t>();
    cfg.corpus_sentences = c.at("corpus_sentences").get<std::size_t>();
    cfg.object_noise = c.at("object_noise").get<double>();
    cfg.background_noise = c.at("background_noise").get<double>();
    w.class_names = j.at("classes").get<std::vector<std::string>>();
    w.synonyms = j.at("synonyms").get<std::vector<std::vector<std::string>>>();
    for (const auto& sj : j.at("scenes")) {
      Scene s;
      s.test = sj.at("split").get<std::string>() == "test";
      s.labels.assign(w.class_names.size(), 0);
      for (std::size_t p : sj.at("labels").get<std::vector<std::size_t>>()) s.labels.at(p) = 1;
      for (const auto& o : sj.at("objects"))
        s.objects.push_back({o.at("class").get<std::size_t>(), o.at("row").get<std::size_t>(),
                             o.at("col").get<std::size_t>(), o.at("height").get<std::size_t>(),
                             o.at("width").get<std::size_t>()});
      w.scenes.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "world.json").string() + ": " + e.what());
  } catch (const std::out_of_range& e) {
    throw IoError((dir / "world.json").string() + ": label index out of range");
  }

  const auto& cfg = w.config;
  const std::size_t per = cfg.grid_h * cfg.grid_w * cfg.patch_dim;
  std::ifstream bin(dir / "patches.bin", std::ios::binary);
  if (!bin) throw IoError("cannot open " + (dir / "patches.bin").string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const std::size_t want = w.scenes.size() * per * 4;
  if (bytes.size() != want)
    throw IoError((dir / "patches.bin").string() + ": expected " + std::to_string(want) + " bytes, found " +
                  std::to_string(bytes.size()) + " (truncated at byte offset " +
                  std::to_string(std::min(bytes.size(), want)) + ")");
  std::size_t at = 0;
  for (auto& s : w.scenes) {
    std::vector<double> vals(per);
    for (auto& v : vals) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at++])) << (8 * b);
      v = static_cast<double>(std::bit_cast<float>(bits));
    }
    s.patches = grad::Tensor({cfg.grid_h * cfg.grid_w, cfg.patch_dim}, std::move(vals));
  }

  auto captions = text::read_lines(dir / "captions.txt");
  if (captions.size() != w.scenes.size())
    throw IoError((dir / "captions.txt").string() + ": " + std::to_string(captions.size()) + " captions for " +
                  std::to_string(w.scenes.size()) + " scenes");
  for (std::size_t i = 0; i < captions.size(); ++i) w.scenes[i].caption = captions[i];
  w.corpus = text::read_lines(dir / "corpus.txt");
  return w;
}

Vocab build_vocab(const SyntheticWorld& world, const EncoderConfig& cfg) {
  std::set<std::string> words;
  auto take = [&](std::string_view s) {
    for (auto& t : split_words(s)) words.insert(std::move(t));
  };
  for (const auto& s : world.scenes) take(s.caption);
  for (const auto& s : world.corpus) take(s);
  for (const auto& n : world.class_names) take(n);
  for (const auto& syns : world.synonyms)
    for (const auto& s : syns) take(s);
  for (auto t : kHandCraftedTemplates) take(t);
  take(kZeroShotTemplate);
  words.erase("class");
  return Vocab(std::vector<std::string>(words.begin(), words.end()), cfg.max_text_len - 3);
}

}  // namespace tai::enc
