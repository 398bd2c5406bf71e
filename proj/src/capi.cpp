// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include "tai/tai.h"

#include <exception>
#include <fstream>
#include <limits>
#include <new>
#include <set>
#include <string>

#include "tai/checkpoint.hpp"
#include "tai/error.hpp"
#include "tai/experiment.hpp"
#include "tai/templates.hpp"

struct tai_config {
  tai::exp::Config cfg;
};

struct tai_world {
  tai::enc::SyntheticWorld world;
};

struct tai_encoder {
  tai::enc::DualEncoder enc;
  std::vector<std::string> class_names;
};

struct tai_prompts {
  tai::train::PromptSet prompts;
};

namespace {

thread_local std::string g_last_error;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename F>
tai_status guard(F&& body) {
  try {
    body();
    return TAI_OK;
  } catch (const UsageError& e) {
    g_last_error = e.what();
    return TAI_ERR_USAGE;
  } catch (const tai::IoError& e) {
    g_last_error = e.what();
    return TAI_ERR_IO;
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return TAI_ERR_VALIDATION;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return TAI_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return TAI_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return TAI_ERR_INTERNAL;
  }
}

template <typename T>
const T& need(const T* p, const char* what) {
  if (p == nullptr) throw UsageError(std::string(what) + " is NULL");
  return *p;
}

const char* need_path(const char* p, const char* what) {
  if (p == nullptr || *p == '\0') throw UsageError(std::string(what) + " path is empty");
  return p;
}

template <typename T>
void need_out(T** out) {
  if (out == nullptr) throw UsageError("output handle pointer is NULL");
  *out = nullptr;
}

tai::text::SynonymDictionary world_dictionary(const tai::enc::SyntheticWorld& w) { return {w.class_names, w.synonyms}; }

std::vector<std::string> configured_templates(const tai::exp::Config& cfg) {
  if (!cfg.templates.empty()) return cfg.templates;
  return {tai::kHandCraftedTemplates.begin(), tai::kHandCraftedTemplates.end()};
}

void check_classes(const tai_encoder& enc, const tai::enc::SyntheticWorld& world) {
  if (enc.class_names.empty()) return;
  if (enc.class_names != world.class_names)
    throw tai::ValidationError("encoder and world disagree on the class list");
}

void check_prompts(const tai_prompts& p, const tai::enc::SyntheticWorld& world) {
  if (p.prompts.class_names != world.class_names)
    throw tai::ValidationError("prompts and world disagree on the class list");
}

void write_text(const char* path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw tai::IoError(std::string("cannot write ") + path);
  out << body;
  if (!out) throw tai::IoError(std::string("write failed for ") + path);
}

}  // namespace

extern "C" {

const char* tai_last_error(void) { return g_last_error.c_str(); }

const char* tai_version(void) { return "0.1.0"; }

tai_status tai_mode_parse(const char* name, tai_mode* out) {
  return guard([&] {
    const std::string n = need_path(name, "mode");
    if (out == nullptr) throw UsageError("output pointer is NULL");
    if (n == "tai") *out = TAI_MODE_TAI;
    else if (n == "tai-dpt") *out = TAI_MODE_TAI_DPT;
    else if (n == "img") *out = TAI_MODE_IMG;
    else throw UsageError("unknown mode '" + n + "' (expected tai, tai-dpt or img)");
  });
}

// ---- configuration ----

tai_status tai_config_default(tai_config** out) {
  return guard([&] {
    need_out(out);
    *out = new tai_config{};
  });
}

tai_status tai_config_load(const char* path, tai_config** out) {
  return guard([&] {
    need_out(out);
    auto cfg = tai::exp::load_config(need_path(path, "config"));
    *out = new tai_config{std::move(cfg)};
  });
}

tai_status tai_config_set_seed(tai_config* cfg, uint64_t seed) {
  return guard([&] {
    if (cfg == nullptr) throw UsageError("config is NULL");
    cfg->cfg.apply_seed(seed);
  });
}

tai_status tai_config_apply_env(tai_config* cfg) {
  return guard([&] {
    if (cfg == nullptr) throw UsageError("config is NULL");
    tai::exp::apply_seed_env(cfg->cfg);
  });
}

tai_status tai_config_set_classes(tai_config* cfg, size_t classes) {
  return guard([&] {
    if (cfg == nullptr) throw UsageError("config is NULL");
    auto next = cfg->cfg;
    next.world.classes = classes;
    next.validate();
    cfg->cfg = std::move(next);
  });
}

tai_status tai_config_set_lambda(tai_config* cfg, double lambda) {
  return guard([&] {
    if (cfg == nullptr) throw UsageError("config is NULL");
    auto next = cfg->cfg;
    next.ensemble_lambda = lambda;
    next.validate();
    cfg->cfg = std::move(next);
  });
}

double tai_config_lambda(const tai_config* cfg) {
  return cfg ? cfg->cfg.ensemble_lambda : std::numeric_limits<double>::quiet_NaN();
}

tai_status tai_config_to_json(const tai_config* cfg, char* buf, size_t cap, size_t* needed) {
  return guard([&] {
    const std::string j = tai::exp::to_json(need(cfg, "config").cfg);
    if (needed) *needed = j.size() + 1;
    if (cap == 0) return;
    if (buf == nullptr) throw UsageError("buffer is NULL");
    const size_t n = std::min(cap - 1, j.size());
    j.copy(buf, n);
    buf[n] = '\0';
  });
}

void tai_config_free(tai_config* cfg) { delete cfg; }

// ---- world ----

tai_status tai_world_generate(const tai_config* cfg, tai_world** out) {
  return guard([&] {
    need_out(out);
    const auto& c = need(cfg, "config").cfg;
    c.validate();
    *out = new tai_world{tai::enc::generate_world(c.world)};
  });
}

tai_status tai_world_save(const tai_world* world, const char* dir) {
  return guard([&] { tai::enc::save_world(need(world, "world").world, need_path(dir, "world")); });
}

tai_status tai_world_load(const char* dir, tai_world** out) {
  return guard([&] {
    need_out(out);
    *out = new tai_world{tai::enc::load_world(need_path(dir, "world"))};
  });
}

size_t tai_world_num_classes(const tai_world* world) { return world ? world->world.num_classes() : 0; }

size_t tai_world_num_scenes(const tai_world* world) { return world ? world->world.scenes.size() : 0; }

const char* tai_world_class_name(const tai_world* world, size_t i) {
  if (world == nullptr || i >= world->world.class_names.size()) return nullptr;
  return world->world.class_names[i].c_str();
}

void tai_world_free(tai_world* world) { delete world; }

// ---- encoder ----

tai_status tai_encoder_pretrain(const tai_config* cfg, const tai_world* world, tai_encoder** out) {
  return guard([&] {
    need_out(out);
    const auto& c = need(cfg, "config").cfg;
    const auto& w = need(world, "world").world;
    c.validate();
    auto r = tai::enc::contrastive_pretrain(w, c.encoder, c.pretrain);
    *out = new tai_encoder{std::move(r.encoder), w.class_names};
  });
}

tai_status tai_encoder_retrieval(const tai_encoder* enc, const tai_world* world, double* out) {
  return guard([&] {
    if (out == nullptr) throw UsageError("output pointer is NULL");
    const auto& w = need(world, "world").world;
    *out = tai::enc::retrieval_accuracy(need(enc, "encoder").enc, w, w.split(true), 32);
  });
}

tai_status tai_encoder_save(const tai_encoder* enc, const char* path) {
  return guard([&] {
    const auto& e = need(enc, "encoder");
    tai::io::save_checkpoint(need_path(path, "checkpoint"), tai::io::encoder_entries(e.enc, e.class_names));
  });
}

tai_status tai_encoder_load(const char* path, tai_encoder** out) {
  return guard([&] {
    need_out(out);
    const auto entries = tai::io::load_checkpoint(need_path(path, "checkpoint"));
    *out = new tai_encoder{tai::io::encoder_from_entries(entries), tai::io::class_names_from_entries(entries)};
  });
}

void tai_encoder_free(tai_encoder* enc) { delete enc; }

// ---- corpus ----

tai_status tai_filter_world(const tai_config* cfg, const tai_world* world, const char* out_jsonl, size_t* count) {
  return guard([&] {
    const auto texts = tai::exp::build_text_corpus(need(world, "world").world, need(cfg, "config").cfg);
    tai::text::write_jsonl(need_path(out_jsonl, "output"), texts);
    if (count) *count = texts.size();
  });
}

tai_status tai_filter_files(const char* corpus, const char* synonyms, const char* templates, const char* out_jsonl,
                            size_t* count) {
  return guard([&] {
    const auto sentences = tai::text::read_lines(need_path(corpus, "corpus"));
    const auto dict = tai::text::load_synonyms(need_path(synonyms, "synonyms"));
    auto texts = tai::text::filter_corpus(sentences, dict);
    if (templates != nullptr) {
      const auto injected = tai::text::inject_templates(dict, tai::exp::load_templates(templates));
      texts.insert(texts.end(), injected.begin(), injected.end());
    }
    tai::text::write_jsonl(need_path(out_jsonl, "output"), texts);
    if (count) *count = texts.size();
  });
}

// ---- prompts ----

tai_status tai_prompts_train_texts(const tai_config* cfg, const tai_encoder* enc, const char* texts_jsonl,
                                   tai_mode mode, tai_prompts** out) {
  return guard([&] {
    need_out(out);
    const auto& c = need(cfg, "config").cfg;
    const auto& e = need(enc, "encoder");
    c.validate();
    if (mode != TAI_MODE_TAI && mode != TAI_MODE_TAI_DPT)
      throw UsageError("text training takes mode tai or tai-dpt");
    if (e.class_names.empty()) throw tai::ValidationError("encoder checkpoint carries no class names");
    const auto texts = tai::text::read_jsonl(need_path(texts_jsonl, "texts"), e.class_names.size());
    const auto pm = mode == TAI_MODE_TAI ? tai::train::PromptMode::kGlobalOnly : tai::train::PromptMode::kDoubleGrained;
    *out = new tai_prompts{tai::exp::train_text_prompts(c, e.enc, texts, e.class_names, pm).prompts};
  });
}

tai_status tai_prompts_train_images(const tai_config* cfg, const tai_encoder* enc, const tai_world* world,
                                    tai_prompts** out) {
  return guard([&] {
    need_out(out);
    const auto& c = need(cfg, "config").cfg;
    const auto& e = need(enc, "encoder");
    const auto& w = need(world, "world").world;
    c.validate();
    check_classes(e, w);
    *out = new tai_prompts{tai::exp::train_image_prompts(c, e.enc, w).prompts};
  });
}

tai_status tai_prompts_save(const tai_prompts* prompts, const char* path) {
  return guard([&] {
    tai::io::save_checkpoint(need_path(path, "checkpoint"), tai::io::prompt_entries(need(prompts, "prompts").prompts));
  });
}

tai_status tai_prompts_load(const char* path, const tai_encoder* enc, tai_prompts** out) {
  return guard([&] {
    need_out(out);
    const auto& e = need(enc, "encoder");
    const auto entries = tai::io::load_checkpoint(need_path(path, "checkpoint"));
    *out = new tai_prompts{tai::io::prompts_from_entries(entries, e.enc)};
  });
}

void tai_prompts_free(tai_prompts* prompts) { delete prompts; }

// ---- evaluation ----

tai_status tai_eval(const tai_config* cfg, const tai_encoder* enc, const tai_world* world, const tai_prompts* prompts,
                    const char* scores_csv, const char* metrics_csv, double* map) {
  return guard([&] {
    const auto& c = need(cfg, "config").cfg;
    const auto& e = need(enc, "encoder");
    const auto& w = need(world, "world").world;
    c.validate();
    check_classes(e, w);
    const auto test = tai::exp::encode_test_set(e.enc, w);
    tai::grad::Tensor scores;
    if (prompts != nullptr) {
      check_prompts(*prompts, w);
      scores = tai::exp::score_test_set(c, e.enc, test, prompts->prompts);
    } else {
      scores = tai::exp::zero_shot_test_set(c, e.enc, test, w.class_names);
    }
    const auto report = tai::eval::evaluate(scores, test.labels, w.class_names);
    if (scores_csv) tai::eval::write_scores_csv(scores_csv, scores);
    if (metrics_csv) tai::eval::write_metrics_csv(metrics_csv, report);
    if (map) *map = report.map;
  });
}

tai_status tai_eval_scores(const tai_world* world, const char* scores_csv, const char* metrics_csv, double* map) {
  return guard([&] {
    const auto& w = need(world, "world").world;
    const auto scores = tai::eval::read_scores_csv(need_path(scores_csv, "scores"));
    std::vector<std::vector<std::uint8_t>> labels;
    for (std::size_t i : w.split(true)) labels.push_back(w.scenes[i].labels);
    const auto report = tai::eval::evaluate(scores, labels, w.class_names);
    if (metrics_csv) tai::eval::write_metrics_csv(metrics_csv, report);
    if (map) *map = report.map;
  });
}

tai_status tai_ensemble(const char* a_csv, const char* b_csv, double lambda, const char* out_csv) {
  return guard([&] {
    const auto a = tai::eval::read_scores_csv(need_path(a_csv, "first scores"));
    const auto b = tai::eval::read_scores_csv(need_path(b_csv, "second scores"));
    tai::eval::write_scores_csv(need_path(out_csv, "output"), tai::eval::ensemble_scores(a, b, lambda));
  });
}

tai_status tai_heatmap(const tai_encoder* enc, const tai_world* world, const tai_prompts* prompts, size_t scene,
                       const char* out_stem) {
  return guard([&] {
    const auto& e = need(enc, "encoder");
    const auto& w = need(world, "world").world;
    const auto& p = need(prompts, "prompts").prompts;
    check_prompts(*prompts, w);
    if (scene >= w.scenes.size())
      throw tai::ValidationError("scene " + std::to_string(scene) + " out of range (world has " +
                                 std::to_string(w.scenes.size()) + ")");
    const auto out = e.enc.image.encode(w.scenes[scene].patches);
    const auto P = tai::eval::correlation_map(out.sequence, tai::train::compute_class_embeddings(p, e.enc));
    tai::eval::export_correlation_map(P, p.class_names, need_path(out_stem, "output"), w.config.grid_h,
                                      w.config.grid_w);
  });
}

tai_status tai_ablate_corpus_size(const tai_config* cfg, const tai_encoder* enc, const tai_world* world,
                                  const char* texts_jsonl, const char* out_csv) {
  return guard([&] {
    const auto& c = need(cfg, "config").cfg;
    const auto& e = need(enc, "encoder");
    const auto& w = need(world, "world").world;
    c.validate();
    check_classes(e, w);
    need_path(out_csv, "output");
    std::vector<tai::text::PseudoLabeledText> sentences;
    if (texts_jsonl == nullptr) {
      sentences = tai::text::filter_corpus(w.corpus, world_dictionary(w));
    } else {
      // Template lines are re-added to every subset, so drop them here.
      std::set<std::string> injected;
      for (const auto& t : tai::text::inject_templates(world_dictionary(w), configured_templates(c)))
        injected.insert(t.text);
      for (auto& t : tai::text::read_jsonl(texts_jsonl, w.num_classes()))
        if (!injected.contains(t.text)) sentences.push_back(std::move(t));
    }
    write_text(out_csv, tai::exp::format_ablation_csv(tai::exp::ablate_corpus_size(c, e.enc, w, sentences)));
  });
}

}  // extern "C"
