#ifndef BEAMCLEAN_H
#define BEAMCLEAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define BC_FAMILY_GAUSSIAN 0

#define BC_FAMILY_LAPLACE 1

#define BC_NORM_L1 1

#define BC_NORM_L2 2

#define BC_ESTIMATION_CLOSED_FORM 0

#define BC_ESTIMATION_GRADIENT 1

#define BC_ESTIMATION_FIXED 2

typedef enum BcStatus {
  BC_STATUS_OK = 0,
  BC_STATUS_NULL_POINTER = 1,
  BC_STATUS_INVALID_ARGUMENT = 2,
  BC_STATUS_DIMENSION_MISMATCH = 3,
  BC_STATUS_TOKEN_OUT_OF_RANGE = 4,
  BC_STATUS_FORMAT = 5,
  BC_STATUS_IO = 6,
  BC_STATUS_NUMERICAL = 7,
  BC_STATUS_PROTOCOL = 8,
  BC_STATUS_BUFFER_TOO_SMALL = 9,
  BC_STATUS_PANIC = 10,
} BcStatus;

/**
 * Opaque next-token prior.
 */
typedef struct BcPrior BcPrior;

/**
 * Opaque embedding table.
 */
typedef struct BcTable BcTable;

/**
 * Decoder settings. Fill with [`bc_decode_options_default`] before editing.
 */
typedef struct BcDecodeOptions {
  size_t beam_width;
  /**
   * Candidates per step; 0 means the whole vocabulary.
   */
  size_t candidate_pool;
  double prior_weight;
  /**
   * One of the `BC_ESTIMATION_*` constants.
   */
  int32_t estimation;
  /**
   * One of the `BC_FAMILY_*` constants.
   */
  int32_t family;
  /**
   * Non-zero for one scale per coordinate.
   */
  int32_t diagonal;
  /**
   * Non-zero to estimate a mean offset.
   */
  int32_t estimate_mu;
  /**
   * Starting isotropic scale; NaN to estimate it from the input.
   */
  double init_scale;
} BcDecodeOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *bc_last_error_message(void);

/**
 * Loads an `EMBT` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BcStatus bc_table_load(const char *path, struct BcTable **out);

/**
 * Creates a synthetic table with standard-normal rows.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum BcStatus bc_table_generate(size_t vocab_size,
                                size_t dim,
                                uint64_t seed,
                                double min_gap,
                                struct BcTable **out);

/**
 * Writes a table to an `EMBT` file.
 *
 * # Safety
 * `table` must come from this library; `path` must be NUL-terminated.
 */
enum BcStatus bc_table_save(const struct BcTable *table, const char *path);

/**
 * Releases a table; NULL is ignored.
 *
 * # Safety
 * `table` must come from this library and not be used afterwards.
 */
void bc_table_free(struct BcTable *table);

/**
 * Vocabulary size, or 0 for NULL.
 *
 * # Safety
 * `table` must be NULL or come from this library.
 */
size_t bc_table_vocab_size(const struct BcTable *table);

/**
 * Embedding dimension, or 0 for NULL.
 *
 * # Safety
 * `table` must be NULL or come from this library.
 */
size_t bc_table_dim(const struct BcTable *table);

/**
 * Largest pairwise row distance in the family's norm (l2 Gaussian, l1 Laplace).
 *
 * # Safety
 * `table` must come from this library; `out` must be valid.
 */
enum BcStatus bc_table_sensitivity(const struct BcTable *table, int32_t family_code, double *out);

/**
 * Noise scale for a budget. Pass NaN as `delta` for the Laplace mechanism.
 *
 * # Safety
 * `out` must be valid.
 */
enum BcStatus bc_calibrate_scale(int32_t family_code,
                                 double sensitivity,
                                 double epsilon,
                                 double delta,
                                 double *out);

/**
 * Reported epsilon at a noise scale; NaN `delta` uses the default 1e-5.
 *
 * # Safety
 * `out` must be valid.
 */
enum BcStatus bc_epsilon_from_scale(int32_t family_code,
                                    double sensitivity,
                                    double scale,
                                    double delta,
                                    double *out);

/**
 * Embeds `ids` and adds noise; writes `len * dim` floats row-major to `out`.
 *
 * # Safety
 * `ids` must hold `len` entries and `out` `out_len` entries.
 */
enum BcStatus bc_obfuscate(const struct BcTable *table,
                           const uint32_t *ids,
                           size_t len,
                           int32_t family_code,
                           double scale,
                           uint64_t seed,
                           float *out,
                           size_t out_len);

/**
 * Nearest-row decoding of `len` noisy rows (`len * dim` floats).
 *
 * # Safety
 * `y` must hold `len * dim` floats and `out` `out_len` ids.
 */
enum BcStatus bc_nn_decode(const struct BcTable *table,
                           const float *y,
                           size_t len,
                           int32_t norm_code,
                           uint32_t *out,
                           size_t out_len);

/**
 * Uniform prior over `vocab_size` tokens.
 *
 * # Safety
 * `out` must be valid.
 */
enum BcStatus bc_prior_uniform(size_t vocab_size, struct BcPrior **out);

/**
 * Loads an n-gram prior saved by `train-prior`.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum BcStatus bc_prior_ngram_load(const char *path, struct BcPrior **out);

/**
 * Releases a prior; NULL is ignored.
 *
 * # Safety
 * `prior` must come from this library and not be used afterwards.
 */
void bc_prior_free(struct BcPrior *prior);

/**
 * Vocabulary size, or 0 for NULL.
 *
 * # Safety
 * `prior` must be NULL or come from this library.
 */
size_t bc_prior_vocab_size(const struct BcPrior *prior);

/**
 * Next-token log-probabilities after `context`; writes `V` doubles.
 *
 * # Safety
 * `context` must hold `context_len` ids and `out` `out_len` doubles.
 */
enum BcStatus bc_prior_next_logprobs(const struct BcPrior *prior,
                                     const uint32_t *context,
                                     size_t context_len,
                                     double *out,
                                     size_t out_len);

/**
 * Defaults: beam 20, whole vocabulary, weight 1, closed-form Gaussian
 * isotropic estimation, estimated starting scale.
 *
 * # Safety
 * `options` must be valid.
 */
enum BcStatus bc_decode_options_default(struct BcDecodeOptions *options);

/**
 * Beam-search decoding of `len` noisy rows. Writes the best sequence to
 * `out` and, if `out_score` is non-NULL, its log-score.
 *
 * # Safety
 * Handles must come from this library; `y` must hold `len * dim` floats,
 * `out` `out_len` ids; `options` may be NULL for defaults.
 */
enum BcStatus bc_decode(const struct BcTable *table,
                        const struct BcPrior *prior,
                        const float *y,
                        size_t len,
                        const struct BcDecodeOptions *options,
                        uint32_t *out,
                        size_t out_len,
                        double *out_score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BEAMCLEAN_H */
