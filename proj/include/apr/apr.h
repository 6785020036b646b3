/* C interface to the APR class-incremental engine.
 *
 * All handles are opaque. Functions return an apr_status; on failure the
 * message of the most recent error on the calling thread is available from
 * apr_last_error() until the next call into the library.
 */
#ifndef APR_APR_H
#define APR_APR_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(APR_BUILDING_LIBRARY)
#define APR_API __declspec(dllexport)
#else
#define APR_API __declspec(dllimport)
#endif
#else
#define APR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum apr_status {
    APR_OK = 0,
    APR_E_DIMENSION = 1,
    APR_E_NUMERIC = 2,
    APR_E_CONTRACT = 3,
    APR_E_CONFIG = 4,
    APR_E_DECODE = 5,
    APR_E_STATS = 6,
    APR_E_IO = 7,
    APR_E_ARGUMENT = 8, /* null pointer, unknown name, buffer too small */
    APR_E_INTERNAL = 9
} apr_status;

typedef struct apr_config apr_config;
typedef struct apr_run apr_run;
typedef struct apr_bench apr_bench;

/* Progress callback; `msg` is valid only for the duration of the call. */
typedef void (*apr_log_fn)(const char *msg, void *user);

APR_API const char *apr_version(void);
APR_API const char *apr_status_name(apr_status s);
APR_API const char *apr_last_error(void);

/* ---- configuration ---- */

APR_API apr_status apr_config_new(apr_config **out);
/* `path` may be NULL for pure defaults. */
APR_API apr_status apr_config_load(const char *path, apr_config **out);
/* Dotted key, value parsed as JSON when possible (e.g. "apr.alpha", "32"). */
APR_API apr_status apr_config_set(apr_config *cfg, const char *dotted_key, const char *value);
/* Resolved config as JSON. Writes at most `cap` bytes including the NUL and
 * stores the full length (without NUL) in *len. */
APR_API apr_status apr_config_json(const apr_config *cfg, char *buf, size_t cap, size_t *len);
/* Run directory the config resolves to: $APR_OUTPUT_ROOT or output.root, then output.name. */
APR_API apr_status apr_config_run_dir(const apr_config *cfg, char *buf, size_t cap, size_t *len);
APR_API void apr_config_free(apr_config *cfg);

/* ---- runs ---- */

/* `out_dir` may be NULL to use apr_config_run_dir. `command` is recorded in
 * run metadata and may be NULL. */
APR_API apr_status apr_run_benchmark(const apr_config *cfg, const char *out_dir, const char *command,
                                     apr_log_fn log, void *user, apr_run **out);
APR_API apr_status apr_run_tasks(const apr_run *run, size_t *tasks);
/* classifier: "linear", "ncm" or "mahalanobis". */
APR_API apr_status apr_run_summary(const apr_run *run, const char *classifier, double *a_inc, double *a_last);
APR_API apr_status apr_run_accuracy(const apr_run *run, const char *classifier, size_t task, size_t group,
                                    double *acc);
APR_API apr_status apr_run_wall_seconds(const apr_run *run, double *seconds);
APR_API void apr_run_free(apr_run *run);

APR_API apr_status apr_bench_run(const apr_config *cfg, const char *out_dir, const char *command, apr_log_fn log,
                                 void *user, apr_bench **out);
APR_API apr_status apr_bench_seeds(const apr_bench *bench, size_t *seeds);
/* metric: "A_inc" or "A_last". */
APR_API apr_status apr_bench_stat(const apr_bench *bench, const char *classifier, const char *metric, double *mean,
                                  double *std);
APR_API void apr_bench_free(apr_bench *bench);

/* Runs the alpha and iteration sweeps from the config's `sweep` section;
 * results land in <out_dir>/sweep.csv. */
APR_API apr_status apr_sweep_run(const apr_config *cfg, const char *out_dir, const char *command, apr_log_fn log,
                                 void *user, size_t *points);

/* ---- storage ---- */

typedef struct apr_storage_query {
    uint64_t classes;
    uint64_t feature_dim;
    uint64_t candidates; /* k per class */
    uint64_t policy_records;
    uint64_t policy_bytes;
    uint64_t float_bytes;
    uint64_t index_bytes;
    uint64_t svd_k; /* 0: omit the decomposed row */
} apr_storage_query;

typedef struct apr_storage_row {
    char component[32];
    uint64_t bytes;
    double megabytes;
} apr_storage_row;

APR_API apr_status apr_storage_query_from_config(const apr_config *cfg, size_t task, apr_storage_query *out);
/* Fills up to `cap` rows; *n_rows receives the number available. */
APR_API apr_status apr_storage_report(const apr_storage_query *q, apr_storage_row *rows, size_t cap,
                                      size_t *n_rows);

/* Rewrites a prototype store file with rank-k covariances (k = 0: full). */
APR_API apr_status apr_store_decompose(const char *in_path, const char *out_path, size_t k);
/* Class count and stored covariance scalars of a store file. */
APR_API apr_status apr_store_info(const char *path, size_t *classes, size_t *feature_dim, size_t *cov_scalars);

#ifdef __cplusplus
}
#endif

#endif
