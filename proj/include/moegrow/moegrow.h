/*
 * Copyright (c) 2026 The moegrow Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MOEGROW_MOEGROW_H_
#define MOEGROW_MOEGROW_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MOEGROW_API __declspec(dllexport)
#else
#define MOEGROW_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every fallible call returns MG_OK or an error code; the message of the most
 * recent failure on the calling thread is available from mg_last_error(). */
typedef enum mg_status {
  MG_OK = 0,
  MG_ERR_DIMENSION = 1,
  MG_ERR_ARGUMENT = 2,
  MG_ERR_NUMERIC = 3,
  MG_ERR_FORMAT = 4,
  MG_ERR_CORRUPTION = 5,
  MG_ERR_UNSUPPORTED = 6,
  MG_ERR_IO = 7,
  MG_ERR_TRAINING = 8,
  MG_ERR_DATA = 9,
  MG_ERR_SPEC = 10,
  MG_ERR_INTERNAL = 99
} mg_status;

typedef enum mg_depth_method {
  MG_DEPTH_INTERPOSITION = 0,
  MG_DEPTH_STACK = 1
} mg_depth_method;

typedef enum mg_stop_kind {
  MG_STOP_STEPS = 0,
  MG_STOP_EXTRA_FLOPS = 1
} mg_stop_kind;

typedef enum mg_budget_mode {
  MG_BUDGET_FIXED_EXTRA = 0,
  MG_BUDGET_FIXED_TOTAL = 1
} mg_budget_mode;

typedef enum mg_report_format {
  MG_REPORT_CSV = 0,
  MG_REPORT_JSON = 1
} mg_report_format;

typedef struct mg_checkpoint mg_checkpoint;
typedef struct mg_run_config mg_run_config;

typedef struct mg_checkpoint_info {
  uint64_t n_layers;
  uint64_t d_model;
  uint64_t vocab;
  uint64_t n_experts;
  uint64_t top_k;
  uint64_t step;
  uint64_t cumulative_flops;
  uint64_t n_growth_events;
  uint64_t n_tensors;
  uint64_t flops_per_token;
} mg_checkpoint_info;

typedef struct mg_fp_stats {
  double max_rel_diff;
  double mean_abs_diff;
  double base_loss;
  double grown_loss;
  double loss_delta;
} mg_fp_stats;

MOEGROW_API const char* mg_last_error(void);
MOEGROW_API const char* mg_status_name(mg_status status);

/* Run configuration (JSON document; unknown keys are rejected). */
MOEGROW_API mg_status mg_run_config_parse(const char* json_text,
                                          mg_run_config** out);
MOEGROW_API mg_status mg_run_config_load(const char* path, mg_run_config** out);
MOEGROW_API void mg_run_config_free(mg_run_config* config);

/* Checkpoints. */
MOEGROW_API mg_status mg_checkpoint_init(const mg_run_config* config,
                                         mg_checkpoint** out);
MOEGROW_API mg_status mg_checkpoint_load(const char* path, mg_checkpoint** out);
MOEGROW_API mg_status mg_checkpoint_save(const mg_checkpoint* ckpt,
                                         const char* path);
MOEGROW_API void mg_checkpoint_free(mg_checkpoint* ckpt);
MOEGROW_API mg_status mg_checkpoint_get_info(const mg_checkpoint* ckpt,
                                             mg_checkpoint_info* out);
/* Growth event `index` (0 = oldest). Strings stay valid while ckpt lives. */
MOEGROW_API mg_status mg_checkpoint_growth_event(const mg_checkpoint* ckpt,
                                                 size_t index,
                                                 const char** kind,
                                                 const char** plan,
                                                 uint64_t* base_step,
                                                 uint64_t* base_flops);
/* Read-only view of a named tensor's float32 data. */
MOEGROW_API mg_status mg_checkpoint_tensor(const mg_checkpoint* ckpt,
                                           const char* name,
                                           const float** data,
                                           size_t* n_elements);

/* Growth. `repeats` may be NULL, in which case every layer is repeated
 * `factor` times (interposition) or the stack is tiled `factor` times. */
MOEGROW_API mg_status mg_grow_depth(const mg_checkpoint* base,
                                    mg_depth_method method, size_t factor,
                                    const size_t* repeats, size_t n_repeats,
                                    mg_checkpoint** out);
MOEGROW_API mg_status mg_grow_width(const mg_checkpoint* base, size_t factor,
                                    double alpha, uint64_t seed,
                                    mg_checkpoint** out);

/* Analysis. mg_norm_profile writes min(capacity, n_layers) values and sets
 * *n_layers to the full profile length. */
MOEGROW_API mg_status mg_norm_profile(const mg_checkpoint* ckpt, double* out,
                                      size_t capacity, size_t* n_layers);
MOEGROW_API mg_status mg_norm_profile_write_csv(const mg_checkpoint* ckpt,
                                                const char* path);
/* Compares logits on `n_probe_tokens` uniform random tokens (sequences of up
 * to 32 tokens) drawn from `seed`. */
MOEGROW_API mg_status mg_fp_deviation(const mg_checkpoint* base,
                                      const mg_checkpoint* grown,
                                      size_t n_probe_tokens, uint64_t seed,
                                      mg_fp_stats* out);

/* Training. With `resume` NULL a fresh model is initialised from the config
 * seed; otherwise training continues `resume` at schedule position
 * resume.step. MG_STOP_EXTRA_FLOPS stops once the ledger has grown by
 * `stop_value` FLOPs. `log_csv` may be NULL. */
MOEGROW_API mg_status mg_train(const mg_run_config* config,
                               const mg_checkpoint* resume,
                               mg_stop_kind stop_kind, uint64_t stop_value,
                               const char* log_csv, mg_checkpoint** out);
MOEGROW_API mg_status mg_eval(const mg_checkpoint* ckpt,
                              const mg_run_config* config,
                              double* heldout_loss);
MOEGROW_API mg_status mg_sweep(const mg_run_config* config,
                               const uint64_t* start_steps, size_t n_starts,
                               mg_budget_mode mode, uint64_t budget,
                               size_t jobs, const char* out_path,
                               mg_report_format format, size_t* n_rows);

#ifdef __cplusplus
}
#endif

#endif  // MOEGROW_MOEGROW_H_
