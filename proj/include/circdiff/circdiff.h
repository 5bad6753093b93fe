/* Copyright (C) 2026 The circdiff Authors
 * SPDX-License-Identifier: Apache-2.0 */

/* C interface to circdiff. Every call returns a cd_status; on failure the
 * message is available from cd_last_error() on the calling thread. Strings
 * returned through char** are owned by the caller and released with
 * cd_string_free(). Options are flat "key=value" lines. */

#ifndef CIRCDIFF_H
#define CIRCDIFF_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define CD_API __declspec(dllexport)
#else
#define CD_API __attribute__((visibility("default")))
#endif

typedef enum cd_status {
    CD_OK = 0,
    CD_ERR_INVALID_ARGUMENT = 1,
    CD_ERR_PARSE = 2,
    CD_ERR_IO = 3,
    CD_ERR_ILLEGAL_DESIGN = 4,
    CD_ERR_ENCODING_OVERFLOW = 5,
    CD_ERR_INAPPLICABLE_ACTION = 6,
    CD_ERR_LEGALIZATION_FAILURE = 7,
    CD_ERR_MISSING_PARENT = 8,
    CD_ERR_VERIFICATION_FAILURE = 9,
    CD_ERR_DIVERGENCE = 10,
    CD_ERR_SAMPLING_FAILURE = 11,
    CD_ERR_MUST_COMPUTE_REFERENCE = 12,
    CD_ERR_ROUND_FAILURE = 13,
    CD_ERR_UNSUPPORTED = 14,
    CD_ERR_INTERNAL = 99
} cd_status;

typedef enum cd_design_kind { CD_COMPRESSOR_TREE = 0, CD_PREFIX = 1 } cd_design_kind;

typedef struct cd_design cd_design;

typedef void (*cd_log_fn)(const char* line, void* user);

CD_API const char* cd_version(void);
CD_API const char* cd_last_error(void);
CD_API const char* cd_status_name(cd_status status);
CD_API void cd_string_free(char* s);

/* Designs. */
CD_API cd_status cd_design_seed(int n, const char* name, cd_design** out);
CD_API cd_status cd_design_from_json(const char* json, cd_design** out);
CD_API cd_status cd_design_load(const char* path, cd_design** out);
CD_API cd_status cd_design_to_json(const cd_design* d, char** out);
CD_API cd_status cd_design_save(const cd_design* d, const char* path);
CD_API cd_status cd_design_kind_of(const cd_design* d, cd_design_kind* out);
/* Multiplier width for trees, adder width for prefix bitmaps. */
CD_API cd_status cd_design_width(const cd_design* d, int* out);
CD_API void cd_design_free(cd_design* d);

/* JSON array of violations; *count receives its length. */
CD_API cd_status cd_design_validate(const cd_design* d, char** violations_json, int* count);
/* Repairs a tree (bounded by max_steps, 0 for the default) or a prefix
 * bitmap. report_json may be NULL; it is also filled when a tree cannot be
 * repaired within the budget. */
CD_API cd_status cd_design_legalize(const cd_design* d, int max_steps, cd_design** out, char** report_json);

/* Structural netlist of the multiplier built from a tree and an optional
 * prefix CPA (NULL: serial), or of a prefix adder alone when `tree` is NULL. */
CD_API cd_status cd_emit_hdl(const cd_design* tree, const cd_design* cpa, char** hdl);
/* Exhaustive check of a netlist. Multipliers need n <= 10 and adders
 * n <= 12 operand bits. *pass is 1 or 0; result_json holds the first
 * counterexample. */
CD_API cd_status cd_verify_hdl(const char* hdl, int n, int is_adder, int* pass, char** result_json);
/* QoR label of the multiplier (tree plus optional CPA) as JSON. */
CD_API cd_status cd_evaluate(const cd_design* tree, const cd_design* cpa, double tradeoff, char** qor_json);

/* Datasets. Options: kind, n, unlabeled, labeled, mean_mutations, seed,
 * jobs, tradeoff, frozen_ct (path of the tree that scores prefix designs). */
CD_API cd_status cd_dataset_generate(const char* options, const char* out_dir, char** summary_json);

/* Training. Options: epochs, batch, lr, seed, jobs, base_width, time_dim,
 * schedule, schedule_steps, validation_fraction, init (checkpoint to
 * continue from). */
CD_API cd_status cd_train_diffusion(const char* dataset_dir, const char* options, const char* out_checkpoint,
                                    char** result_json);
CD_API cd_status cd_train_predictor(const char* dataset_dir, const char* options, const char* out_checkpoint,
                                    char** result_json);

/* Sampling. `predictor` may be NULL for unguided sampling. Options: count,
 * steps, target, strength, reflect_steps, seed, jobs, schedule,
 * schedule_steps, legalize, evaluate, tradeoff, frozen_ct. Writes designs
 * and samples.csv into out_dir. */
CD_API cd_status cd_sample(const char* denoiser, const char* predictor, const char* options, const char* out_dir,
                           char** summary_json);

/* Campaigns. `config` is the key=value campaign configuration. */
CD_API cd_status cd_campaign_run(const char* config, const char* dir, cd_log_fn log, void* user, char** report_json);
/* Canonical key=value text for a config (defaults filled in). */
CD_API cd_status cd_campaign_config_normalize(const char* config, char** out);

/* Non-dominated filter over a CSV with id,delay,area,y columns (comment
 * lines allowed). */
CD_API cd_status cd_pareto_filter(const char* csv, char** out_csv);
/* Tidy plot data from a directory of campaign and sample runs. */
CD_API cd_status cd_export_plots(const char* dir, const char* out_dir, char** summary_json);

#ifdef __cplusplus
}
#endif

#endif /* CIRCDIFF_H */
