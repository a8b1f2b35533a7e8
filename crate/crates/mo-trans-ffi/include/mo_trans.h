#ifndef MO_TRANS_H
#define MO_TRANS_H

/* Generated by cbindgen from mo-trans-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call in this API.
typedef enum MoTransStatus {
  MO_TRANS_STATUS_OK = 0,
  // A required pointer argument was null.
  MO_TRANS_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  MO_TRANS_STATUS_INVALID_UTF8 = 2,
  // The configuration failed validation or could not be parsed.
  MO_TRANS_STATUS_INVALID_CONFIG = 3,
  // The genome failed validation or could not be parsed.
  MO_TRANS_STATUS_INVALID_GENOME = 4,
  // The search engine reported an error.
  MO_TRANS_STATUS_SEARCH_FAILED = 5,
  // Reading or writing a file failed.
  MO_TRANS_STATUS_IO_FAILED = 6,
  // An index was out of range.
  MO_TRANS_STATUS_OUT_OF_RANGE = 7,
  // A panic was caught at the boundary.
  MO_TRANS_STATUS_PANIC = 8,
} MoTransStatus;

// Which fitness function a search handle uses. Neural variants train real
// models on a synthetic task corpus derived from the config seed.
typedef enum MoTransEvaluatorKind {
  MO_TRANS_EVALUATOR_KIND_SURROGATE = 0,
  MO_TRANS_EVALUATOR_KIND_NEURAL_COPY = 1,
  MO_TRANS_EVALUATOR_KIND_NEURAL_REVERSE = 2,
  MO_TRANS_EVALUATOR_KIND_NEURAL_SORT = 3,
} MoTransEvaluatorKind;

// Opaque search configuration handle.
typedef struct MoTransConfig MoTransConfig;

// Opaque architecture genome handle.
typedef struct MoTransGenome MoTransGenome;

// Opaque search handle: optimizer state plus the evaluator chosen at
// construction.
typedef struct MoTransSearch MoTransSearch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; do not free.
const char *mo_trans_version(void);

// Message describing the calling thread's most recent failure; empty when
// the last call succeeded. Borrowed — do not free.
const char *mo_trans_last_error(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be null or a pointer previously returned by a `char**` out
// parameter of this library, not yet freed.
void mo_trans_string_free(char *s);

// Creates a configuration with the built-in defaults.
//
// # Safety
// `out` must be a valid pointer.
enum MoTransStatus mo_trans_config_default(struct MoTransConfig **out);

// Parses and validates a configuration from its JSON form.
//
// # Safety
// `json` must be a valid NUL-terminated string; `out` must be valid.
enum MoTransStatus mo_trans_config_from_json(const char *json, struct MoTransConfig **out);

// Serializes a configuration to JSON.
//
// # Safety
// `config` must be a live handle; `out` must be valid.
enum MoTransStatus mo_trans_config_to_json(const struct MoTransConfig *config, char **out);

// Destroys a configuration handle.
//
// # Safety
// `config` must be null or a live handle; it is invalid afterwards.
void mo_trans_config_free(struct MoTransConfig *config);

// Writes the exact architecture-space size for `ne` encoder and `nd`
// decoder blocks as a decimal string.
//
// # Safety
// `config` must be a live handle; `out` must be valid.
enum MoTransStatus mo_trans_space_size(const struct MoTransConfig *config,
                                       size_t ne,
                                       size_t nd,
                                       char **out);

// Parses a genome from its JSON form (structural checks only; use
// [`mo_trans_genome_check`] for config-level validation).
//
// # Safety
// `json` must be a valid NUL-terminated string; `out` must be valid.
enum MoTransStatus mo_trans_genome_from_json(const char *json, struct MoTransGenome **out);

// Decodes a genome from its flat integer encoding.
//
// # Safety
// `values` must point to `len` readable u32s; `config` must be a live
// handle; `out` must be valid.
enum MoTransStatus mo_trans_genome_from_flat(const uint32_t *values,
                                             size_t len,
                                             const struct MoTransConfig *config,
                                             struct MoTransGenome **out);

// Serializes a genome to JSON.
//
// # Safety
// `genome` must be a live handle; `out` must be valid.
enum MoTransStatus mo_trans_genome_to_json(const struct MoTransGenome *genome, char **out);

// Writes the flat encoding into `buffer`. Call with `buffer = NULL` to
// query the required length via `len`.
//
// # Safety
// `genome` must be a live handle; `len` must be valid; `buffer`, when
// non-null, must hold at least `*len` writable u32s (its capacity on input).
enum MoTransStatus mo_trans_genome_to_flat(const struct MoTransGenome *genome,
                                           uint32_t *buffer,
                                           size_t *len);

// Renders a genome as a Graphviz DOT schematic.
//
// # Safety
// `genome` must be a live handle; `out` must be valid.
enum MoTransStatus mo_trans_genome_to_dot(const struct MoTransGenome *genome, char **out);

// Validates a genome against a configuration; violations are reported
// through [`mo_trans_last_error`], newline-separated.
//
// # Safety
// `genome` and `config` must be live handles.
enum MoTransStatus mo_trans_genome_check(const struct MoTransGenome *genome,
                                         const struct MoTransConfig *config);

// Exact trainable-parameter count of the genome's model.
//
// # Safety
// `genome` must be a live handle; `out` must be valid.
enum MoTransStatus mo_trans_genome_param_count(const struct MoTransGenome *genome,
                                               size_t embed_dim,
                                               size_t src_vocab,
                                               size_t tgt_vocab,
                                               uint64_t *out);

// Destroys a genome handle.
//
// # Safety
// `genome` must be null or a live handle; it is invalid afterwards.
void mo_trans_genome_free(struct MoTransGenome *genome);

// Evaluates a genome with the closed-form surrogate; writes the metrics as
// JSON.
//
// # Safety
// `genome` and `config` must be live handles; `out` must be valid.
enum MoTransStatus mo_trans_eval_surrogate(const struct MoTransGenome *genome,
                                           const struct MoTransConfig *config,
                                           char **out);

// Creates a fresh (uninitialized) search from a configuration, master
// seed, and evaluator choice.
//
// # Safety
// `config` must be a live handle; `out` must be valid.
enum MoTransStatus mo_trans_search_new(const struct MoTransConfig *config,
                                       uint64_t seed,
                                       enum MoTransEvaluatorKind evaluator,
                                       struct MoTransSearch **out);

// Restores a search from a checkpoint file. Pass the evaluator the
// original run used; the checkpoint stores only the optimizer state.
//
// # Safety
// `path` must be a valid NUL-terminated string; `out` must be valid.
enum MoTransStatus mo_trans_search_load(const char *path,
                                        enum MoTransEvaluatorKind evaluator,
                                        struct MoTransSearch **out);

// Writes the search state to a checkpoint file (atomically).
//
// # Safety
// `search` must be a live handle; `path` must be a valid string.
enum MoTransStatus mo_trans_search_save(const struct MoTransSearch *search, const char *path);

// Draws and evaluates the initial population with up to `workers` threads.
//
// # Safety
// `search` must be a live handle.
enum MoTransStatus mo_trans_search_initialize(struct MoTransSearch *search, size_t workers);

// Advances the search by one subproblem update; sets `done` when all
// configured generations have been swept.
//
// # Safety
// `search` must be a live, initialized handle; `done` must be valid.
enum MoTransStatus mo_trans_search_step(struct MoTransSearch *search, bool *done);

// Runs to completion: initializes if necessary, then sweeps every
// remaining generation.
//
// # Safety
// `search` must be a live handle.
enum MoTransStatus mo_trans_search_run(struct MoTransSearch *search);

// Completed generation count.
//
// # Safety
// `search` must be a live handle; `out` must be valid.
enum MoTransStatus mo_trans_search_generation(const struct MoTransSearch *search, size_t *out);

// Number of evaluator calls recorded in the run history.
//
// # Safety
// `search` must be a live handle; `out` must be valid.
enum MoTransStatus mo_trans_search_eval_count(const struct MoTransSearch *search, size_t *out);

// Size of the non-dominated archive.
//
// # Safety
// `search` must be a live handle; `out` must be valid.
enum MoTransStatus mo_trans_search_ep_len(const struct MoTransSearch *search, size_t *out);

// Objective pair of archive entry `index`.
//
// # Safety
// `search` must be a live handle; `f1` and `f2` must be valid.
enum MoTransStatus mo_trans_search_ep_objectives(const struct MoTransSearch *search,
                                                 size_t index,
                                                 double *f1,
                                                 double *f2);

// Genome of archive entry `index`, as a fresh handle.
//
// # Safety
// `search` must be a live handle; `out` must be valid.
enum MoTransStatus mo_trans_search_ep_genome(const struct MoTransSearch *search,
                                             size_t index,
                                             struct MoTransGenome **out);

// The archive as CSV (header `genome_flat,bleu,perplexity,f1,f2,params`,
// sorted by f1).
//
// # Safety
// `search` must be a live handle; `out` must be valid.
enum MoTransStatus mo_trans_search_pareto_csv(const struct MoTransSearch *search, char **out);

// Destroys a search handle.
//
// # Safety
// `search` must be null or a live handle; it is invalid afterwards.
void mo_trans_search_free(struct MoTransSearch *search);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MO_TRANS_H */
