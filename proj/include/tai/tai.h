/* Copyright 2026 The TaI-DPT Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the text-as-image prompt tuning library.
 *
 * Every function that can fail returns a tai_status. On failure the message
 * for the calling thread is available from tai_last_error() until the next
 * failing call on that thread. Handles are opaque; each *_free accepts NULL.
 * Handles are not synchronised: share one across threads only for reading.
 */
#ifndef TAI_TAI_H_
#define TAI_TAI_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TAI_API __declspec(dllexport)
#else
#define TAI_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tai_status {
  TAI_OK = 0,
  TAI_ERR_INTERNAL = 1,
  TAI_ERR_USAGE = 2,      /* bad argument (NULL handle, unknown mode, ...) */
  TAI_ERR_VALIDATION = 3, /* input rejected by a precondition */
  TAI_ERR_IO = 4          /* file missing, unreadable, unwritable or corrupt */
} tai_status;

typedef enum tai_mode {
  TAI_MODE_TAI = 0,     /* global prompt only */
  TAI_MODE_TAI_DPT = 1, /* global and local prompts */
  TAI_MODE_IMG = 2      /* trained on labeled images instead of texts */
} tai_mode;

typedef struct tai_config tai_config;
typedef struct tai_world tai_world;
typedef struct tai_encoder tai_encoder;
typedef struct tai_prompts tai_prompts;

TAI_API const char* tai_last_error(void);
TAI_API const char* tai_version(void);
/* Parses "tai", "tai-dpt" or "img". */
TAI_API tai_status tai_mode_parse(const char* name, tai_mode* out);

/* ---- configuration ---- */

TAI_API tai_status tai_config_default(tai_config** out);
/* JSON file; unknown keys and out-of-range values are rejected. */
TAI_API tai_status tai_config_load(const char* path, tai_config** out);
/* Replaces the seed of every stage. */
TAI_API tai_status tai_config_set_seed(tai_config* cfg, uint64_t seed);
/* Applies TAI_SEED from the environment, if set. */
TAI_API tai_status tai_config_apply_env(tai_config* cfg);
TAI_API tai_status tai_config_set_classes(tai_config* cfg, size_t classes);
TAI_API tai_status tai_config_set_lambda(tai_config* cfg, double lambda);
/* Ensemble weight; NaN for a NULL config. */
TAI_API double tai_config_lambda(const tai_config* cfg);
/* Copies the effective config as JSON into buf (NUL-terminated when it fits).
 * *needed receives the size including the terminator. buf may be NULL when cap is 0. */
TAI_API tai_status tai_config_to_json(const tai_config* cfg, char* buf, size_t cap, size_t* needed);
TAI_API void tai_config_free(tai_config* cfg);

/* ---- synthetic world ---- */

TAI_API tai_status tai_world_generate(const tai_config* cfg, tai_world** out);
TAI_API tai_status tai_world_save(const tai_world* world, const char* dir);
TAI_API tai_status tai_world_load(const char* dir, tai_world** out);
TAI_API size_t tai_world_num_classes(const tai_world* world);
TAI_API size_t tai_world_num_scenes(const tai_world* world);
/* Class name i, valid while the world lives; NULL when out of range. */
TAI_API const char* tai_world_class_name(const tai_world* world, size_t i);
TAI_API void tai_world_free(tai_world* world);

/* ---- encoders ---- */

TAI_API tai_status tai_encoder_pretrain(const tai_config* cfg, const tai_world* world, tai_encoder** out);
/* Caption to image retrieval accuracy over the world's test scenes in batches of 32. */
TAI_API tai_status tai_encoder_retrieval(const tai_encoder* enc, const tai_world* world, double* out);
TAI_API tai_status tai_encoder_save(const tai_encoder* enc, const char* path);
TAI_API tai_status tai_encoder_load(const char* path, tai_encoder** out);
TAI_API void tai_encoder_free(tai_encoder* enc);

/* ---- corpus ---- */

/* Filters the world's text corpus with its synonym dictionary and appends the
 * configured templates. Writes JSONL; *count (optional) receives the line count. */
TAI_API tai_status tai_filter_world(const tai_config* cfg, const tai_world* world, const char* out_jsonl,
                                    size_t* count);
/* Same for external files: one sentence per line, a synonym file, and an
 * optional template file (NULL for none). */
TAI_API tai_status tai_filter_files(const char* corpus, const char* synonyms, const char* templates,
                                    const char* out_jsonl, size_t* count);

/* ---- prompt training ---- */

/* Text-trained prompts (TAI_MODE_TAI or TAI_MODE_TAI_DPT). Class names come
 * from the encoder, so it must have been pretrained or saved with them. */
TAI_API tai_status tai_prompts_train_texts(const tai_config* cfg, const tai_encoder* enc, const char* texts_jsonl,
                                           tai_mode mode, tai_prompts** out);
/* Few-shot image-trained prompts from the world's training scenes. */
TAI_API tai_status tai_prompts_train_images(const tai_config* cfg, const tai_encoder* enc, const tai_world* world,
                                            tai_prompts** out);
TAI_API tai_status tai_prompts_save(const tai_prompts* prompts, const char* path);
TAI_API tai_status tai_prompts_load(const char* path, const tai_encoder* enc, tai_prompts** out);
TAI_API void tai_prompts_free(tai_prompts* prompts);

/* ---- evaluation ---- */

/* Scores the world's test scenes. prompts == NULL uses the zero-shot template.
 * Either output path may be NULL; map (optional) receives the mean AP. */
TAI_API tai_status tai_eval(const tai_config* cfg, const tai_encoder* enc, const tai_world* world,
                            const tai_prompts* prompts, const char* scores_csv, const char* metrics_csv,
                            double* map);
/* Metrics for a scores CSV against the world's test labels. */
TAI_API tai_status tai_eval_scores(const tai_world* world, const char* scores_csv, const char* metrics_csv,
                                   double* map);
/* lambda * a + (1 - lambda) * b after min-max normalising each file. */
TAI_API tai_status tai_ensemble(const char* a_csv, const char* b_csv, double lambda, const char* out_csv);
/* Local correlation map of one scene: <stem>.csv plus one PGM per class. */
TAI_API tai_status tai_heatmap(const tai_encoder* enc, const tai_world* world, const tai_prompts* prompts,
                               size_t scene, const char* out_stem);
/* Trains double-grained prompts on nested subsets of the filtered texts
 * (texts_jsonl, or the world's own corpus when NULL) and writes texts,mAP rows. */
TAI_API tai_status tai_ablate_corpus_size(const tai_config* cfg, const tai_encoder* enc, const tai_world* world,
                                          const char* texts_jsonl, const char* out_csv);

#ifdef __cplusplus
}
#endif

#endif /* TAI_TAI_H_ */
