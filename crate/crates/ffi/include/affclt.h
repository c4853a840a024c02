#ifndef AFFCLT_H
#define AFFCLT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every function.
typedef enum AffcltStatus {
  AFFCLT_STATUS_OK = 0,
  AFFCLT_STATUS_NULL_POINTER = 1,
  AFFCLT_STATUS_INVALID_UTF8 = 2,
  AFFCLT_STATUS_CONFIG = 3,
  AFFCLT_STATUS_INVALID_ARGUMENT = 4,
  AFFCLT_STATUS_NUMERICAL = 5,
  AFFCLT_STATUS_IO = 6,
  AFFCLT_STATUS_BUFFER_TOO_SMALL = 7,
  AFFCLT_STATUS_OUT_OF_RANGE = 8,
  AFFCLT_STATUS_PANIC = 9,
} AffcltStatus;

// Runnable commands.
typedef enum AffcltCommand {
  AFFCLT_COMMAND_DIAGNOSE = 0,
  AFFCLT_COMMAND_NORMALITY = 1,
  AFFCLT_COMMAND_ESTIMATE_HT = 2,
  AFFCLT_COMMAND_ESTIMATE_QHAT = 3,
  AFFCLT_COMMAND_ESTIMATE_SOCIO = 4,
  AFFCLT_COMMAND_GEN = 5,
} AffcltCommand;

// Parsed and validated experiment config.
typedef struct AffcltConfig AffcltConfig;

// Result files of one run, held in memory.
typedef struct AffcltRun AffcltRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *affclt_version(void);

// Copies the last error message of this thread into `buf`.
//
// # Safety
// `buf` must be valid for `len` bytes or null; `needed` must be null or valid.
enum AffcltStatus affclt_last_error(char *buf, size_t len, size_t *needed);

// Parses a TOML or JSON config.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be valid for writes.
enum AffcltStatus affclt_config_parse(const char *text, struct AffcltConfig **out);

// Overrides the master seed.
//
// # Safety
// `cfg` must be a live handle from [`affclt_config_parse`].
enum AffcltStatus affclt_config_set_seed(struct AffcltConfig *cfg, uint64_t seed);

// Copies the hex config hash (64 characters) into `buf`.
//
// # Safety
// `cfg` must be a live handle; `buf` valid for `len` bytes or null.
enum AffcltStatus affclt_config_hash(const struct AffcltConfig *cfg,
                                     char *buf,
                                     size_t len,
                                     size_t *needed);

// # Safety
// `cfg` must be null or a handle not yet freed.
void affclt_config_free(struct AffcltConfig *cfg);

// Runs `command` and returns its files in memory.
//
// # Safety
// `cfg` must be a live handle; `out` valid for writes.
enum AffcltStatus affclt_run(const struct AffcltConfig *cfg,
                             enum AffcltCommand command,
                             struct AffcltRun **out);

// Process exit code the CLI would use for this run.
//
// # Safety
// `run` must be a live handle.
enum AffcltStatus affclt_run_exit_code(const struct AffcltRun *run, int32_t *code);

// # Safety
// `run` must be a live handle; `count` valid for writes.
enum AffcltStatus affclt_run_file_count(const struct AffcltRun *run, size_t *count);

// Copies the relative name of file `index` into `buf`.
//
// # Safety
// `run` must be a live handle; `buf` valid for `len` bytes or null.
enum AffcltStatus affclt_run_file_name(const struct AffcltRun *run,
                                       size_t index,
                                       char *buf,
                                       size_t len,
                                       size_t *needed);

// Borrows the contents of file `index`. The pointer stays valid until the
// run is freed.
//
// # Safety
// `run` must be a live handle; `data` and `len` valid for writes.
enum AffcltStatus affclt_run_file_data(const struct AffcltRun *run,
                                       size_t index,
                                       const uint8_t **data,
                                       size_t *len);

// Writes every file under `dir`, all or nothing.
//
// # Safety
// `run` must be a live handle; `dir` a NUL-terminated path.
enum AffcltStatus affclt_run_write(const struct AffcltRun *run, const char *dir);

// # Safety
// `run` must be null or a handle not yet freed.
void affclt_run_free(struct AffcltRun *run);

// Two-sided Kolmogorov distance of the sample to `N(0, 1)`.
//
// # Safety
// `x` must be valid for `len` reads; `out` valid for writes.
enum AffcltStatus affclt_ks_distance(const double *x, size_t len, double *out);

// Quantile-coupling Wasserstein-1 distance of the sample to `N(0, 1)`.
//
// # Safety
// `x` must be valid for `len` reads; `out` valid for writes.
enum AffcltStatus affclt_w1_distance(const double *x, size_t len, double *out);

// Matérn covariance at distance `h`, general `nu`.
//
// # Safety
// `out` must be valid for writes.
enum AffcltStatus affclt_matern_cov(double sigma2, double phi, double nu, double h, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AFFCLT_H */
