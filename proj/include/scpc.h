/* Self-contrastive point-cloud learning, C interface.
 *
 * The shared library wraps the C++ core behind opaque handles and integer
 * status codes. Every function that can fail returns scpc_status; on
 * failure scpc_last_error() holds a thread-local description of what went
 * wrong. String outputs are copied into caller buffers and are always
 * NUL-terminated when the call succeeds.
 */

#ifndef SCPC_H
#define SCPC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum scpc_status {
  SCPC_OK = 0,
  SCPC_ERROR_INVALID_ARGUMENT = 1, /* bad input, config, or precondition */
  SCPC_ERROR_IO = 2,               /* file missing, unwritable, or malformed */
  SCPC_ERROR_RUNTIME = 3,          /* internal failure (e.g. diverged training) */
  SCPC_ERROR_CHECK_FAILED = 4      /* a verification suite reported failures */
} scpc_status;

/* Opaque handles. */
typedef struct scpc_config scpc_config;
typedef struct scpc_cloud scpc_cloud;

const char* scpc_version(void);

/* Message for the most recent failure on the calling thread. */
const char* scpc_last_error(void);

/* ---- run configuration ------------------------------------------------- */

/* Creates a config holding every key at its default. */
scpc_status scpc_config_create(scpc_config** out_config);
void scpc_config_destroy(scpc_config* config);

/* Merges key=value lines from a file ('#' starts a comment). */
scpc_status scpc_config_load_file(scpc_config* config, const char* path);

scpc_status scpc_config_set(scpc_config* config, const char* key,
                            const char* value);
scpc_status scpc_config_get(const scpc_config* config, const char* key,
                            char* buffer, size_t buffer_size);

/* 16-hex-digit identity hash over the canonical form (out_dir excluded). */
scpc_status scpc_config_hash(const scpc_config* config, char* buffer,
                             size_t buffer_size);

scpc_status scpc_config_validate(const scpc_config* config);

/* ---- point clouds ------------------------------------------------------ */

/* kind is one of sphere, cube, cylinder, torus, cross. */
scpc_status scpc_cloud_generate(const char* kind, size_t n_points,
                                double noise_sigma, uint64_t seed,
                                scpc_cloud** out_cloud);
scpc_status scpc_cloud_read_xyz(const char* path, scpc_cloud** out_cloud);
scpc_status scpc_cloud_write_xyz(const scpc_cloud* cloud, const char* path);
size_t scpc_cloud_point_count(const scpc_cloud* cloud);
int scpc_cloud_has_labels(const scpc_cloud* cloud);
/* out_xyz must hold 3 * point_count doubles (x y z per point). */
scpc_status scpc_cloud_copy_points(const scpc_cloud* cloud, double* out_xyz);
/* out_labels must hold point_count entries; fails when unlabeled. */
scpc_status scpc_cloud_copy_labels(const scpc_cloud* cloud,
                                   int32_t* out_labels);
void scpc_cloud_destroy(scpc_cloud* cloud);

/* ---- pipeline stages ---------------------------------------------------- */

/* stage: gen, train-sim, mine, train-con, probe, seg-probe, sweep, ablate,
 * or pipeline (which runs the configured stage list in order). Outputs land
 * in the config's out_dir. */
scpc_status scpc_run_stage(const scpc_config* config, const char* stage);

/* Runs the finite-difference gradient suite. The report (one line per op)
 * is copied into the buffer; out_all_passed receives 1 or 0. Returns
 * SCPC_ERROR_CHECK_FAILED when any check fails. */
scpc_status scpc_gradcheck(char* report_buffer, size_t buffer_size,
                           int* out_all_passed);

#ifdef __cplusplus
}
#endif

#endif /* SCPC_H */
