/* bitforge C API: a quantization-aware self-distillation toolkit for tiny
 * language models, exposed as a shared library with opaque handles.
 *
 * Conventions:
 *   - every function returns a bf_status; BF_OK (0) means success
 *   - on failure bf_last_error() describes what went wrong (thread-local)
 *   - pipeline commands take a JSON options string and return a JSON run
 *     manifest; free returned strings with bf_string_free()
 *   - handles are created by bf_*_open/load calls and released with the
 *     matching bf_*_free; freeing NULL is a no-op
 */
#ifndef BITFORGE_H
#define BITFORGE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define BITFORGE_API __declspec(dllexport)
#else
#define BITFORGE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bf_status {
    BF_OK = 0,
    BF_ERR_INVALID_ARG = 1, /* bad pointer, contract violation */
    BF_ERR_CONFIG = 2,      /* invalid or missing configuration */
    BF_ERR_IO = 3,          /* filesystem failure */
    BF_ERR_FORMAT = 4,      /* unreadable or incompatible file */
    BF_ERR_DATA = 5,        /* malformed payload */
    BF_ERR_NUMERIC = 6,     /* non-finite values, diverged run */
    BF_ERR_RUNTIME = 7      /* anything else */
} bf_status;

BITFORGE_API const char* bf_version(void);

/* message for the most recent failure on this thread; never NULL */
BITFORGE_API const char* bf_last_error(void);

BITFORGE_API void bf_string_free(char* s);

/* ---- opaque handles ---------------------------------------------------- */

typedef struct bf_model bf_model;
typedef struct bf_dataset bf_dataset;

BITFORGE_API bf_status bf_model_load(const char* path, bf_model** out);
BITFORGE_API bf_status bf_model_save(const bf_model* m, const char* path);
BITFORGE_API void bf_model_free(bf_model* m);
BITFORGE_API bf_status bf_model_param_count(const bf_model* m, uint64_t* out);
BITFORGE_API bf_status bf_model_vocab_size(const bf_model* m, int64_t* out);

/* greedy when temperature == 0; writes up to max_new token ids */
BITFORGE_API bf_status bf_model_sample(const bf_model* m, const int32_t* prompt,
                                       size_t prompt_len, double temperature, int64_t max_new,
                                       uint64_t seed, int32_t* out_tokens, size_t* out_len);

/* perplexity over byte tokens (one token per byte of text) */
BITFORGE_API bf_status bf_model_perplexity(const bf_model* m, const char* text, size_t text_len,
                                           int64_t window, double* out_ppl);

BITFORGE_API bf_status bf_dataset_load(const char* path, bf_dataset** out);
BITFORGE_API bf_status bf_dataset_save(const bf_dataset* ds, const char* path);
BITFORGE_API void bf_dataset_free(bf_dataset* ds);
BITFORGE_API bf_status bf_dataset_size(const bf_dataset* ds, uint64_t* out);

/* ---- quantization primitives ------------------------------------------- */

/* Group-wise quantize-then-dequantize of a [rows x cols] row-major matrix.
 * format is one of "nf_asym", "nf_sym", "int_asym", "int_sym"; out may alias
 * values. Reports the mean squared reconstruction error when out_mse is set. */
BITFORGE_API bf_status bf_fake_quant(const double* values, int64_t rows, int64_t cols, int bits,
                                     const char* format, int64_t group_size, double* out,
                                     double* out_mse);

/* ---- pipeline commands (JSON options -> JSON manifest) ------------------ */

BITFORGE_API bf_status bf_cmd_pretrain(const char* options_json, char** manifest_json);
BITFORGE_API bf_status bf_cmd_gen_data(const char* options_json, char** manifest_json);
BITFORGE_API bf_status bf_cmd_quantize(const char* options_json, char** manifest_json);
BITFORGE_API bf_status bf_cmd_train(const char* options_json, char** manifest_json);
BITFORGE_API bf_status bf_cmd_eval(const char* options_json, char** manifest_json);
BITFORGE_API bf_status bf_cmd_demo_mixture(const char* options_json, char** manifest_json);
BITFORGE_API bf_status bf_cmd_compare(const char* options_json, char** manifest_json);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* BITFORGE_H */
