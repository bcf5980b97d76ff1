#ifndef STSEQ_STSEQ_H
#define STSEQ_STSEQ_H

/* C interface to the training library. Every call returns a status; on
 * failure the message is available from stseq_last_error() on the same
 * thread until the next failing call. Strings returned through `char**`
 * are owned by the caller and released with stseq_string_free(). */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define STSEQ_API __declspec(dllexport)
#else
#define STSEQ_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum stseq_status {
  STSEQ_OK = 0,
  STSEQ_ERR_CONFIG = 1,
  STSEQ_ERR_DIMENSION = 2,
  STSEQ_ERR_INDEX = 3,
  STSEQ_ERR_CONTRACT = 4,
  STSEQ_ERR_NUMERIC = 5,
  STSEQ_ERR_IO = 6,
  STSEQ_ERR_ARGUMENT = 7,
  STSEQ_ERR_CHECK_FAILED = 8,
  STSEQ_ERR_INTERNAL = 9
} stseq_status;

typedef struct stseq_config stseq_config;
typedef struct stseq_model stseq_model;

STSEQ_API const char* stseq_version(void);
STSEQ_API const char* stseq_last_error(void);
STSEQ_API const char* stseq_status_name(stseq_status status);
STSEQ_API void stseq_string_free(char* s);

/* Run configurations. */
STSEQ_API stseq_status stseq_config_new(stseq_config** out);
STSEQ_API stseq_status stseq_config_from_json(const char* json, stseq_config** out);
STSEQ_API stseq_status stseq_config_load(const char* path, stseq_config** out);
/* Merges a JSON object into the configuration; the result must validate,
 * otherwise the configuration is left unchanged. */
STSEQ_API stseq_status stseq_config_update(stseq_config* config, const char* json_patch);
STSEQ_API stseq_status stseq_config_to_json(const stseq_config* config, char** out);
STSEQ_API stseq_status stseq_config_hash(const stseq_config* config, char** out);
STSEQ_API void stseq_config_free(stseq_config* config);

/* Trains one run. With a non-NULL out_dir, writes config.json,
 * metrics.jsonl, timing.jsonl, summary.csv and checkpoint.bin there.
 * summary_json may be NULL. */
STSEQ_API stseq_status stseq_train(const stseq_config* config, const char* out_dir,
                                   char** summary_json);

/* Trained models, restored from a checkpoint file. */
STSEQ_API stseq_status stseq_model_load(const char* checkpoint_path, stseq_model** out);
STSEQ_API stseq_status stseq_model_config(const stseq_model* model, char** json);
/* Exact-match accuracy on n_samples held-out tasks at each frame count;
 * accuracy must hold n_frames values. */
STSEQ_API stseq_status stseq_model_evaluate(const stseq_model* model, const size_t* frames,
                                            size_t n_frames, size_t n_samples,
                                            double* accuracy);
STSEQ_API void stseq_model_free(stseq_model* model);

/* Ablation table 5, 7 or 8 derived from `base`. */
STSEQ_API stseq_status stseq_ablate(const stseq_config* base, int table, const char* out_dir,
                                    size_t jobs, int force, char** summary_json);

/* Finite-difference gradient check of a small 64-bit model. Returns
 * STSEQ_ERR_CHECK_FAILED when the tolerance is exceeded; the report is
 * written either way. */
STSEQ_API stseq_status stseq_gradcheck(uint64_t seed, int global_local, char** report_json);

/* Writes n tasks as JSON lines. split is "any", "train" or "test". */
STSEQ_API stseq_status stseq_gen_data(const stseq_config* config, size_t n, const char* split,
                                      const char* path);

/* Runs every invariant check. Returns STSEQ_ERR_CHECK_FAILED when any fails;
 * the report is written either way. */
STSEQ_API stseq_status stseq_verify(uint64_t seed, char** report_json);

#ifdef __cplusplus
}
#endif

#endif
