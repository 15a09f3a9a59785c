#ifndef AGESIM_H
#define AGESIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define AGESIM_POLICY_NONE 0

#define AGESIM_POLICY_INVERSION 1

#define AGESIM_POLICY_BARREL 2

#define AGESIM_POLICY_TRBG 3

typedef enum AgesimStatus {
  AGESIM_STATUS_OK = 0,
  AGESIM_STATUS_NULL_POINTER = 1,
  AGESIM_STATUS_INVALID_ARGUMENT = 2,
  AGESIM_STATUS_IO = 3,
  AGESIM_STATUS_CONFIG = 4,
  AGESIM_STATUS_OVERFLOW = 5,
  AGESIM_STATUS_BUFFER_TOO_SMALL = 6,
  AGESIM_STATUS_UTF8 = 7,
  AGESIM_STATUS_PANIC = 8,
  AGESIM_STATUS_OTHER = 9,
} AgesimStatus;

// A parsed run configuration.
typedef struct AgesimConfig AgesimConfig;

// A stateful write-data encoder.
typedef struct AgesimEncoder AgesimEncoder;

// Outcome of one simulation run.
typedef struct AgesimResult AgesimResult;

typedef struct AgesimSummary {
  uint64_t cells;
  uint64_t rows;
  uint64_t word_bits;
  uint64_t k_inf;
  // Writes (dwell units) per cell.
  uint64_t total_k;
  double mean;
  double min;
  double max;
  double mean_abs_dev;
  double frac_within_0_05;
  double pct_best_bin;
  double pct_worst_bin;
  double padding_fraction;
} AgesimSummary;

typedef struct AgesimBin {
  double lo;
  double hi;
  uint64_t count;
  double pct;
} AgesimBin;

typedef struct AgesimPolicy {
  // One of the `AGESIM_POLICY_*` constants.
  uint32_t kind;
  // Barrel only.
  uint32_t max_shift;
  // TRBG only: probability that the raw generator emits '1'.
  double bias;
  // TRBG only: balancing counter width.
  uint32_t m;
  bool balancing;
  // TRBG only: advance the balancing counter per word instead of per
  // `agesim_encoder_end_block`.
  bool per_word_balance;
  uint64_t seed;
} AgesimPolicy;

// Per-write metadata. `kind` 0 = none, 1 = invert flag in `value`,
// 2 = left-rotation amount in `value`.
typedef struct AgesimControl {
  uint32_t kind;
  uint32_t value;
} AgesimControl;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *agesim_last_error(void);

// Library version as a static NUL-terminated string.
const char *agesim_version(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void agesim_string_free(char *s);

// Probability that a cell written `k` times with '1'-probability `rho` ends
// with a duty-cycle `≤ b/k` or `≥ 1 − b/k`.
//
// # Safety
// `out` must be a valid pointer to a `double`.
enum AgesimStatus agesim_p_duty_deviation(uint64_t k, double rho, uint64_t b, double *out);

// Natural log of the probability that at least `n` of `cells` cells deviate.
//
// # Safety
// `out` must be a valid pointer to a `double`.
enum AgesimStatus agesim_ln_p_at_least_n(uint64_t k,
                                         double rho,
                                         uint64_t b,
                                         uint64_t cells,
                                         uint64_t n,
                                         double *out);

// Parses TOML run-config text. Relative paths resolve against the current
// working directory.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` a valid pointer.
enum AgesimStatus agesim_config_from_toml(const char *toml, struct AgesimConfig **out);

// Reads a run-config file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid pointer.
enum AgesimStatus agesim_config_load(const char *path, struct AgesimConfig **out);

// Overrides the run seed.
//
// # Safety
// `config` must be a live handle.
enum AgesimStatus agesim_config_set_seed(struct AgesimConfig *config, uint64_t seed);

// Overrides the inference count.
//
// # Safety
// `config` must be a live handle.
enum AgesimStatus agesim_config_set_inferences(struct AgesimConfig *config, uint32_t inferences);

// # Safety
// `config` must be NULL or a handle not yet freed.
void agesim_config_free(struct AgesimConfig *config);

// Runs a simulation.
//
// # Safety
// `config` must be a live handle; `out` a valid pointer.
enum AgesimStatus agesim_run(const struct AgesimConfig *config, struct AgesimResult **out);

// # Safety
// `result` must be a live handle; `out` a valid pointer.
enum AgesimStatus agesim_result_summary(const struct AgesimResult *result,
                                        struct AgesimSummary *out);

// Copies the histogram into `bins`. `*len` receives the bin count; when
// `capacity` is too small nothing is copied and `AGESIM_STATUS_BUFFER_TOO_SMALL`
// is returned. `bins` may be NULL when `capacity` is 0.
//
// # Safety
// `bins` must hold `capacity` elements; `len` must be valid.
enum AgesimStatus agesim_result_histogram(const struct AgesimResult *result,
                                          struct AgesimBin *bins,
                                          uintptr_t capacity,
                                          uintptr_t *len);

// Copies the per-cell counters as `(ones, total)` pairs, row-major, into
// `pairs` (`2 · cells` values). Sizing works as for the histogram, with
// `*len` counted in `u32` values.
//
// # Safety
// `pairs` must hold `capacity` values; `len` must be valid.
enum AgesimStatus agesim_result_duty_map(const struct AgesimResult *result,
                                         uint32_t *pairs,
                                         uintptr_t capacity,
                                         uintptr_t *len);

// The run result as JSON; free with [`agesim_string_free`].
//
// # Safety
// `result` must be a live handle; `out` a valid pointer.
enum AgesimStatus agesim_result_to_json(const struct AgesimResult *result, char **out);

// Writes the report files of a run into `dir`.
//
// # Safety
// `result` must be a live handle; `dir` a NUL-terminated string.
enum AgesimStatus agesim_result_emit(const struct AgesimResult *result, const char *dir);

// # Safety
// `result` must be NULL or a handle not yet freed.
void agesim_result_free(struct AgesimResult *result);

// Creates an encoder for a memory of `rows` words of `width` bits.
//
// # Safety
// `policy` and `out` must be valid pointers.
enum AgesimStatus agesim_encoder_new(const struct AgesimPolicy *policy,
                                     uintptr_t width,
                                     uintptr_t rows,
                                     struct AgesimEncoder **out);

// Encodes one word (`limbs` little-endian 64-bit limbs) written to `row`.
// Bits above the word width are ignored. `input` and `output` may alias.
//
// # Safety
// `input` and `output` must hold `limbs` values; `control` must be valid.
enum AgesimStatus agesim_encoder_encode(struct AgesimEncoder *encoder,
                                        const uint64_t *input,
                                        uintptr_t limbs,
                                        uintptr_t row,
                                        uint64_t *output,
                                        struct AgesimControl *control);

// Marks the end of a block write (advances the TRBG balancing counter).
//
// # Safety
// `encoder` must be a live handle.
enum AgesimStatus agesim_encoder_end_block(struct AgesimEncoder *encoder);

// # Safety
// `encoder` must be NULL or a handle not yet freed.
void agesim_encoder_free(struct AgesimEncoder *encoder);

// Inverts an encoding given the metadata the encoder produced.
//
// # Safety
// `input` and `output` must hold `limbs` values.
enum AgesimStatus agesim_decode(const uint64_t *input,
                                uintptr_t limbs,
                                uintptr_t width,
                                struct AgesimControl control,
                                uint64_t *output);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AGESIM_H */
