// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0
//
// tai: command-line driver over the C library.

#include <cstdio>
#include <memory>
#include <optional>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "tai/tai.h"

namespace {

struct Failure {
  int code;
};

void check(tai_status st) {
  if (st == TAI_OK) return;
  std::fprintf(stderr, "tai: %s\n", tai_last_error());
  throw Failure{static_cast<int>(st)};
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Config = std::unique_ptr<tai_config, Deleter<tai_config, tai_config_free>>;
using World = std::unique_ptr<tai_world, Deleter<tai_world, tai_world_free>>;
using Encoder = std::unique_ptr<tai_encoder, Deleter<tai_encoder, tai_encoder_free>>;
using Prompts = std::unique_ptr<tai_prompts, Deleter<tai_prompts, tai_prompts_free>>;

// Shared by every subcommand.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file (defaults apply when omitted)")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Seed for every stage; overrides the config and TAI_SEED");
}

Config load_config(const Common& c) {
  tai_config* raw = nullptr;
  check(c.config.empty() ? tai_config_default(&raw) : tai_config_load(c.config.c_str(), &raw));
  Config cfg(raw);
  check(tai_config_apply_env(cfg.get()));
  if (c.seed) check(tai_config_set_seed(cfg.get(), *c.seed));
  return cfg;
}

World load_world(const std::string& dir) {
  tai_world* raw = nullptr;
  check(tai_world_load(dir.c_str(), &raw));
  return World(raw);
}

Encoder load_encoder(const std::string& path) {
  tai_encoder* raw = nullptr;
  check(tai_encoder_load(path.c_str(), &raw));
  return Encoder(raw);
}

Prompts load_prompts(const std::string& path, const tai_encoder* enc) {
  tai_prompts* raw = nullptr;
  check(tai_prompts_load(path.c_str(), enc, &raw));
  return Prompts(raw);
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training churns through many multi-megabyte tensors; reuse heap pages
  // instead of mapping fresh ones for each.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  CLI::App app{"Text-as-image prompt tuning for multi-label recognition on a synthetic world"};
  app.set_version_flag("--version", std::string(tai_version()));
  app.require_subcommand(1);

  Common common;
  std::string world_dir, out, ckpt, texts, prompts_path, mode_name = "tai-dpt";

  auto* gen = app.add_subcommand("gen-world", "Generate a synthetic world");
  add_common(gen, common);
  std::optional<std::size_t> classes;
  gen->add_option("--classes", classes, "Number of classes");
  gen->add_option("--out", out, "Output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "Contrastively pretrain the dual encoder");
  add_common(pre, common);
  pre->add_option("--world", world_dir, "World directory")->required()->check(CLI::ExistingDirectory);
  pre->add_option("--out", out, "Encoder checkpoint to write")->required();

  auto* filt = app.add_subcommand("filter", "Turn a text corpus into pseudo-labeled JSONL");
  add_common(filt, common);
  std::string corpus, synonyms, templates;
  filt->add_option("--world", world_dir, "Filter the world's corpus with its synonyms")->check(CLI::ExistingDirectory);
  filt->add_option("--corpus", corpus, "Sentence file, one per line")->check(CLI::ExistingFile);
  filt->add_option("--synonyms", synonyms, "Synonym file")->check(CLI::ExistingFile);
  filt->add_option("--templates", templates, "Template file to inject")->check(CLI::ExistingFile);
  filt->add_option("--out", out, "JSONL to write")->required();

  auto* trn = app.add_subcommand("train-prompts", "Learn global and local prompt contexts");
  add_common(trn, common);
  trn->add_option("--mode", mode_name, "tai, tai-dpt or img")->check(CLI::IsMember({"tai", "tai-dpt", "img"}));
  trn->add_option("--texts", texts, "Pseudo-labeled JSONL (tai, tai-dpt)")->check(CLI::ExistingFile);
  trn->add_option("--world", world_dir, "World directory (img)")->check(CLI::ExistingDirectory);
  trn->add_option("--ckpt", ckpt, "Encoder checkpoint")->required()->check(CLI::ExistingFile);
  trn->add_option("--out", out, "Prompt checkpoint to write")->required();

  auto* ev = app.add_subcommand("eval", "Score the world's test scenes and report per-class AP");
  add_common(ev, common);
  std::string scores_out, metrics_out, scores_in;
  ev->add_option("--world", world_dir, "World directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--ckpt", ckpt, "Encoder checkpoint")->check(CLI::ExistingFile);
  ev->add_option("--prompts", prompts_path, "Prompt checkpoint; zero-shot template when omitted")
      ->check(CLI::ExistingFile);
  ev->add_option("--scores-in", scores_in, "Evaluate an existing scores CSV instead of encoding")
      ->check(CLI::ExistingFile);
  ev->add_option("--scores", scores_out, "Scores CSV to write");
  ev->add_option("--metrics", metrics_out, "Metrics CSV to write");

  auto* ens = app.add_subcommand("ensemble", "Fuse two score files");
  add_common(ens, common);
  std::string a_csv, b_csv;
  std::optional<double> lambda;
  ens->add_option("--a", a_csv, "Scores weighted by lambda")->required()->check(CLI::ExistingFile);
  ens->add_option("--b", b_csv, "Scores weighted by 1 - lambda")->required()->check(CLI::ExistingFile);
  ens->add_option("--lambda", lambda, "Weight of --a (config value when omitted)");
  ens->add_option("--out", out, "Fused scores CSV")->required();

  auto* heat = app.add_subcommand("heatmap", "Export the local class-to-patch correlation map of one scene");
  add_common(heat, common);
  std::size_t scene = 0;
  heat->add_option("--world", world_dir, "World directory")->required()->check(CLI::ExistingDirectory);
  heat->add_option("--ckpt", ckpt, "Encoder checkpoint")->required()->check(CLI::ExistingFile);
  heat->add_option("--prompts", prompts_path, "Prompt checkpoint")->required()->check(CLI::ExistingFile);
  heat->add_option("--scene", scene, "Scene index in the world");
  heat->add_option("--out", out, "Output stem (writes <stem>.csv and <stem>_<class>.pgm)")->required();

  auto* abl = app.add_subcommand("ablate-corpus-size", "mAP against the number of training texts");
  add_common(abl, common);
  abl->add_option("--world", world_dir, "World directory")->required()->check(CLI::ExistingDirectory);
  abl->add_option("--ckpt", ckpt, "Encoder checkpoint")->required()->check(CLI::ExistingFile);
  abl->add_option("--texts", texts, "Filtered JSONL; the world's corpus when omitted")->check(CLI::ExistingFile);
  abl->add_option("--out", out, "CSV to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    Config cfg = load_config(common);
    if (gen->parsed()) {
      if (classes) check(tai_config_set_classes(cfg.get(), *classes));
      tai_world* w = nullptr;
      check(tai_world_generate(cfg.get(), &w));
      World world(w);
      check(tai_world_save(world.get(), out.c_str()));
    } else if (pre->parsed()) {
      World world = load_world(world_dir);
      tai_encoder* e = nullptr;
      check(tai_encoder_pretrain(cfg.get(), world.get(), &e));
      Encoder enc(e);
      check(tai_encoder_save(enc.get(), out.c_str()));
      double acc = 0.0;
      check(tai_encoder_retrieval(enc.get(), world.get(), &acc));
      std::printf("retrieval %.4f\n", acc);
    } else if (filt->parsed()) {
      std::size_t n = 0;
      if (!world_dir.empty()) {
        if (!corpus.empty() || !synonyms.empty()) {
          std::fprintf(stderr, "tai: filter takes either --world or --corpus/--synonyms\n");
          return 2;
        }
        World world = load_world(world_dir);
        check(tai_filter_world(cfg.get(), world.get(), out.c_str(), &n));
      } else {
        if (corpus.empty() || synonyms.empty()) {
          std::fprintf(stderr, "tai: filter needs --world, or --corpus with --synonyms\n");
          return 2;
        }
        check(tai_filter_files(corpus.c_str(), synonyms.c_str(), opt(templates), out.c_str(), &n));
      }
      std::printf("texts %zu\n", n);
    } else if (trn->parsed()) {
      tai_mode mode{};
      check(tai_mode_parse(mode_name.c_str(), &mode));
      Encoder enc = load_encoder(ckpt);
      tai_prompts* p = nullptr;
      if (mode == TAI_MODE_IMG) {
        if (world_dir.empty()) {
          std::fprintf(stderr, "tai: --mode img needs --world\n");
          return 2;
        }
        World world = load_world(world_dir);
        check(tai_prompts_train_images(cfg.get(), enc.get(), world.get(), &p));
      } else {
        if (texts.empty()) {
          std::fprintf(stderr, "tai: --mode %s needs --texts\n", mode_name.c_str());
          return 2;
        }
        check(tai_prompts_train_texts(cfg.get(), enc.get(), texts.c_str(), mode, &p));
      }
      Prompts prompts(p);
      check(tai_prompts_save(prompts.get(), out.c_str()));
    } else if (ev->parsed()) {
      World world = load_world(world_dir);
      double map = 0.0;
      if (!scores_in.empty()) {
        check(tai_eval_scores(world.get(), scores_in.c_str(), opt(metrics_out), &map));
      } else {
        if (ckpt.empty()) {
          std::fprintf(stderr, "tai: eval needs --ckpt or --scores-in\n");
          return 2;
        }
        Encoder enc = load_encoder(ckpt);
        Prompts prompts = prompts_path.empty() ? Prompts() : load_prompts(prompts_path, enc.get());
        check(tai_eval(cfg.get(), enc.get(), world.get(), prompts.get(), opt(scores_out), opt(metrics_out), &map));
      }
      std::printf("mAP %.4f\n", map);
    } else if (ens->parsed()) {
      if (lambda) check(tai_config_set_lambda(cfg.get(), *lambda));
      check(tai_ensemble(a_csv.c_str(), b_csv.c_str(), tai_config_lambda(cfg.get()), out.c_str()));
    } else if (heat->parsed()) {
      World world = load_world(world_dir);
      Encoder enc = load_encoder(ckpt);
      Prompts prompts = load_prompts(prompts_path, enc.get());
      check(tai_heatmap(enc.get(), world.get(), prompts.get(), scene, out.c_str()));
    } else if (abl->parsed()) {
      World world = load_world(world_dir);
      Encoder enc = load_encoder(ckpt);
      check(tai_ablate_corpus_size(cfg.get(), enc.get(), world.get(), opt(texts), out.c_str()));
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return 0;
}
