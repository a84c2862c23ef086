#ifndef GRAPHMTL_H
#define GRAPHMTL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum {
  GMTL_STATUS_OK = 0,
  GMTL_STATUS_NULL_POINTER = 1,
  GMTL_STATUS_INVALID_ARGUMENT = 2,
  GMTL_STATUS_CONFIG = 3,
  GMTL_STATUS_SOLVER = 4,
  GMTL_STATUS_IO = 5,
  GMTL_STATUS_PANIC = 6,
} GmtlStatus;

// A parsed experiment configuration.
typedef struct GmtlConfig GmtlConfig;

// The trace and final predictors of one run.
typedef struct GmtlRun GmtlRun;

// A generated or loaded synthetic world.
typedef struct GmtlWorld GmtlWorld;

// Parameters of a generated world; see [`gmtl_world_spec_default`].
typedef struct {
  size_t d;
  size_t m;
  size_t clusters;
  size_t n;
  size_t dev_size;
  size_t test_size;
  double noise_std;
  uint64_t seed;
  // Neighbours per task in the relatedness graph; 0 picks `min(10, m − 1)`.
  size_t knn;
} GmtlWorldSpec;

// One trace row. `population_loss` and `dist_to_oracle` are NaN when absent.
typedef struct {
  uint64_t round;
  uint64_t comm_rounds;
  double vectors_per_machine;
  uint64_t samples_per_machine;
  double erm_objective;
  double population_loss;
  double dist_to_oracle;
  double wall_ms;
} GmtlTraceRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *gmtl_last_error_message(void);

// Clears the thread's last error.
void gmtl_clear_error(void);

// Library version as a static NUL-terminated string.
const char *gmtl_version(void);

// Defaults of the synthetic benchmark (`d = m = 100`, `n = 500`, ...).
GmtlWorldSpec gmtl_world_spec_default(void);

// Generates a world.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
GmtlStatus gmtl_world_generate(GmtlWorldSpec spec, GmtlWorld **out);

// Loads a world saved by [`gmtl_world_save`] or the `gen` command.
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be writable.
GmtlStatus gmtl_world_load(const char *dir, GmtlWorld **out);

// Saves a world to a directory.
//
// # Safety
// `world` must be a live handle; `dir` a NUL-terminated string.
GmtlStatus gmtl_world_save(const GmtlWorld *world, const char *dir);

// Dimension, task count and connectivity of a world.
//
// # Safety
// `world` must be a live handle; the output pointers may be NULL.
GmtlStatus gmtl_world_shape(const GmtlWorld *world, size_t *d, size_t *m, bool *connected);

// Copies the `m × m` adjacency matrix.
//
// # Safety
// `world` must be a live handle; `buf` must hold `len` doubles.
GmtlStatus gmtl_world_adjacency(const GmtlWorld *world, double *buf, size_t len);

// Copies the `d × m` true predictor matrix.
//
// # Safety
// `world` must be a live handle; `buf` must hold `len` doubles.
GmtlStatus gmtl_world_true_predictors(const GmtlWorld *world, double *buf, size_t len);

// Releases a world. NULL is ignored.
//
// # Safety
// `world` must be NULL or a handle not yet freed.
void gmtl_world_free(GmtlWorld *world);

// Parses a configuration from its text form (`key = value` lines).
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
GmtlStatus gmtl_config_parse(const char *text, GmtlConfig **out);

// Replaces the run and world seeds.
//
// # Safety
// `config` must be a live handle.
GmtlStatus gmtl_config_set_seed(GmtlConfig *config, uint64_t seed);

// Releases a configuration. NULL is ignored.
//
// # Safety
// `config` must be NULL or a handle not yet freed.
void gmtl_config_free(GmtlConfig *config);

// Runs a configuration in memory. With `world` NULL the world comes from
// the configuration itself.
//
// # Safety
// `config` must be a live handle, `world` NULL or a live handle, `out`
// writable.
GmtlStatus gmtl_run(const GmtlConfig *config, const GmtlWorld *world, GmtlRun **out);

// Runs a configuration file end to end, writing its output directory.
// A solver failure inside the run returns [`GmtlStatus::Solver`] after the
// partial outputs are written.
//
// # Safety
// `path` must be a NUL-terminated string.
GmtlStatus gmtl_run_config_file(const char *path);

// Number of recorded trace rows.
//
// # Safety
// `run` must be NULL or a live handle; NULL gives 0.
size_t gmtl_run_row_count(const GmtlRun *run);

// Copies trace row `index`.
//
// # Safety
// `run` must be a live handle; `row` writable.
GmtlStatus gmtl_run_row(const GmtlRun *run, size_t index, GmtlTraceRow *row);

// Copies the final `d × m` predictor matrix.
//
// # Safety
// `run` must be a live handle; `buf` must hold `len` doubles.
GmtlStatus gmtl_run_predictors(const GmtlRun *run, double *buf, size_t len);

// Releases a run. NULL is ignored.
//
// # Safety
// `run` must be NULL or a handle not yet freed.
void gmtl_run_free(GmtlRun *run);

// `ρ(B, S)` of the graph with the given `m × m` adjacency.
//
// # Safety
// `adjacency` must point to `m * m` doubles; `out` writable.
GmtlStatus gmtl_rho(const double *adjacency, size_t m, double b, double s, double *out);

// `(τ/(η+τ))^{t/(1+Γ)}·v0`, the delayed-gossip contraction bound.
double gmtl_theorem7_bound(size_t t, double eta, double tau, size_t gamma_max, double v0);

// Runs every verification suite, writing one report CSV per suite into
// `out_dir` when it is not NULL. `all_pass` receives the overall verdict.
//
// # Safety
// `out_dir` must be NULL or a NUL-terminated string; `all_pass` writable.
GmtlStatus gmtl_verify(uint64_t seed, const char *out_dir, bool *all_pass);

// Whether the world source of a configuration is generated (`true`) or
// loaded from disk.
//
// # Safety
// `config` must be a live handle.
bool gmtl_config_generates_world(const GmtlConfig *config);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAPHMTL_H */
