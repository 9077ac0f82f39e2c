#ifndef ABCPRUNE_H
#define ABCPRUNE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AbcStatus {
  ABC_STATUS_OK = 0,
  ABC_STATUS_NULL_POINTER = 1,
  ABC_STATUS_INVALID_ARGUMENT = 2,
  ABC_STATUS_PARSE = 3,
  ABC_STATUS_IO = 4,
  ABC_STATUS_EVALUATOR = 5,
  ABC_STATUS_BUFFER_TOO_SMALL = 6,
  ABC_STATUS_PANIC = 7,
} AbcStatus;

/**
 * Opaque architecture handle.
 */
typedef struct AbcArch AbcArch;

/**
 * Opaque search result handle.
 */
typedef struct AbcResult AbcResult;

/**
 * Opaque search-space handle.
 */
typedef struct AbcSpace AbcSpace;

typedef struct AbcCost {
  uint64_t channels;
  uint64_t flops;
  uint64_t params;
} AbcCost;

typedef struct AbcSearchConfig {
  uint32_t cycles;
  uint32_t population;
  uint32_t max_trials;
  uint32_t fitness_epochs;
  uint64_t seed;
} AbcSearchConfig;

/**
 * Fitness callback. Writes a value in `[0, 1]` to `out_fitness` and
 * returns 0; any other return value marks the evaluation as failed.
 * Always invoked on the thread that called [`abc_search_run`].
 */
typedef int32_t (*AbcEvaluateFn)(void *user_data,
                                 const size_t *channels,
                                 size_t len,
                                 uint64_t seed,
                                 uint32_t epochs,
                                 double *out_fitness);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a
 * successful call. Valid until the next call on this thread.
 */
const char *abc_last_error(void);

/**
 * Loads a descriptor file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_arch` must be writable.
 */
enum AbcStatus abc_arch_load(const char *path, struct AbcArch **out_arch);

/**
 * Parses a descriptor from a JSON string.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out_arch` must be writable.
 */
enum AbcStatus abc_arch_from_json(const char *json, struct AbcArch **out_arch);

/**
 * # Safety
 * `arch` must be NULL or a handle from `abc_arch_load`/`abc_arch_from_json`
 * not yet freed.
 */
void abc_arch_free(struct AbcArch *arch);

/**
 * Number of searchable dimensions (tie groups count once); 0 for NULL.
 *
 * # Safety
 * `arch` must be NULL or a live handle.
 */
size_t abc_arch_dimensions(const struct AbcArch *arch);

/**
 * Base channel count of every searchable dimension.
 *
 * # Safety
 * `arch` must be a live handle; `buf` must hold `cap` elements.
 */
enum AbcStatus abc_arch_base_channels(const struct AbcArch *arch,
                                      size_t *buf,
                                      size_t cap,
                                      size_t *out_len);

/**
 * Cost of a pruned structure, or of the baseline when `channels` is NULL.
 *
 * # Safety
 * `arch` must be a live handle; `channels` must be NULL or hold `len`
 * elements; `out_cost` must be writable.
 */
enum AbcStatus abc_arch_cost(const struct AbcArch *arch,
                             const size_t *channels,
                             size_t len,
                             struct AbcCost *out_cost);

/**
 * Builds the candidate lists at upper bound `alpha_tenths / 10`.
 *
 * # Safety
 * `arch` must be a live handle; `out_space` must be writable.
 */
enum AbcStatus abc_space_build(const struct AbcArch *arch,
                               uint8_t alpha_tenths,
                               struct AbcSpace **out_space);

/**
 * # Safety
 * `space` must be NULL or a handle from `abc_space_build` not yet freed.
 */
void abc_space_free(struct AbcSpace *space);

/**
 * # Safety
 * `space` must be NULL or a live handle.
 */
size_t abc_space_dimensions(const struct AbcSpace *space);

/**
 * Sorted candidate list of dimension `dim`.
 *
 * # Safety
 * `space` must be a live handle; `buf` must hold `cap` elements.
 */
enum AbcStatus abc_space_candidates(const struct AbcSpace *space,
                                    size_t dim,
                                    size_t *buf,
                                    size_t cap,
                                    size_t *out_len);

/**
 * Nearest candidate of dimension `dim` to `value`; ties go to the smaller.
 *
 * # Safety
 * `space` must be a live handle; `out_value` must be writable.
 */
enum AbcStatus abc_space_snap(const struct AbcSpace *space,
                              double value,
                              size_t dim,
                              size_t *out_value);

/**
 * Number of structures in the space as a decimal string.
 *
 * # Safety
 * `space` must be a live handle; `buf` must hold `cap` bytes.
 */
enum AbcStatus abc_space_size_string(const struct AbcSpace *space,
                                     char *buf,
                                     size_t cap,
                                     size_t *out_len);

struct AbcSearchConfig abc_search_config_default(void);

/**
 * Runs the search over `space`, calling `evaluate` once per fitness
 * evaluation. A failure during initialisation aborts with
 * `ABC_STATUS_EVALUATOR`; later failures reject the candidate.
 *
 * # Safety
 * `space` must be a live handle; `config` must be NULL (defaults) or point
 * to a valid config; `out_result` must be writable. `user_data` is passed
 * through untouched.
 */
enum AbcStatus abc_search_run(const struct AbcSpace *space,
                              const struct AbcSearchConfig *config,
                              AbcEvaluateFn evaluate,
                              void *user_data,
                              struct AbcResult **out_result);

/**
 * # Safety
 * `result` must be NULL or a handle from `abc_search_run` not yet freed.
 */
void abc_result_free(struct AbcResult *result);

/**
 * Best fitness found; NaN for NULL.
 *
 * # Safety
 * `result` must be NULL or a live handle.
 */
double abc_result_fitness(const struct AbcResult *result);

/**
 * Number of fitness evaluations; 0 for NULL.
 *
 * # Safety
 * `result` must be NULL or a live handle.
 */
uint64_t abc_result_evaluations(const struct AbcResult *result);

/**
 * Channel counts of the best structure.
 *
 * # Safety
 * `result` must be a live handle; `buf` must hold `cap` elements.
 */
enum AbcStatus abc_result_structure(const struct AbcResult *result,
                                    size_t *buf,
                                    size_t cap,
                                    size_t *out_len);

/**
 * Event history as newline-delimited JSON.
 *
 * # Safety
 * `result` must be a live handle; `buf` must hold `cap` bytes.
 */
enum AbcStatus abc_result_history(const struct AbcResult *result,
                                  char *buf,
                                  size_t cap,
                                  size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ABCPRUNE_H */
