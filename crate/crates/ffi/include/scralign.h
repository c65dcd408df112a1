#ifndef SCRALIGN_H
#define SCRALIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum ScraStatus {
  SCRA_STATUS_OK = 0,
  SCRA_STATUS_NULL_POINTER = 1,
  SCRA_STATUS_INVALID_ARGUMENT = 2,
  SCRA_STATUS_IO = 3,
  // Malformed input file or checkpoint.
  SCRA_STATUS_PARSE = 4,
  // Degenerate geometry or a non-finite loss.
  SCRA_STATUS_NUMERIC = 5,
  // A Rust panic was caught at the boundary.
  SCRA_STATUS_PANIC = 6,
} ScraStatus;

// A point cloud owned by the library.
typedef struct ScraCloud ScraCloud;

// A trained decoder loaded from a checkpoint.
typedef struct ScraModel ScraModel;

// Budget for the gradient-based registrations.
typedef struct ScraTestTimeOptions {
  size_t steps;
  double lr;
  size_t restarts;
  // Per-point cap on squared distances; zero or negative disables it.
  double clip;
  uint64_t seed;
} ScraTestTimeOptions;

// Rigid transform: Euler angles in degrees (applied x, then y, then z) and
// a translation.
typedef struct ScraTransform {
  double angles_deg[3];
  double translation[3];
} ScraTransform;

typedef struct ScraRegistration {
  struct ScraTransform transform;
  // Chamfer distance of the untransformed source to the target.
  double chamfer_initial;
  double chamfer_final;
  // Optimizer steps or ICP iterations actually run.
  size_t iterations;
} ScraRegistration;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null if none. The
// pointer stays valid until the next failing call on this thread.
const char *scra_last_error(void);

// Defaults matching the command-line tool: 500 steps, lr 0.001, one
// restart, no clipping, seed 0.
struct ScraTestTimeOptions scra_test_time_defaults(void);

// Copies `n_points` xyz triples from `xyz` into a new cloud.
//
// # Safety
// `xyz` must point to `3 * n_points` readable doubles; `out` must be writable.
enum ScraStatus scra_cloud_new(const double *xyz, size_t n_points, struct ScraCloud **out);

// Reads a cloud from a text file with one `x y z` line per point.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum ScraStatus scra_cloud_read_xyz(const char *path, struct ScraCloud **out);

// Releases a cloud. Null is ignored.
//
// # Safety
// `cloud` must be null or a handle from this library not yet freed.
void scra_cloud_free(struct ScraCloud *cloud);

// Number of points, or 0 for null.
//
// # Safety
// `cloud` must be null or a live handle.
size_t scra_cloud_len(const struct ScraCloud *cloud);

// Copies the points into `xyz`, which holds `capacity_points` triples.
//
// # Safety
// `cloud` must be a live handle; `xyz` must hold `3 * capacity_points` doubles.
enum ScraStatus scra_cloud_points(const struct ScraCloud *cloud,
                                  double *xyz,
                                  size_t capacity_points);

// New cloud holding `transform` applied to `cloud`.
//
// # Safety
// Pointers must be live handles or valid structs; `out` must be writable.
enum ScraStatus scra_apply_transform(const struct ScraTransform *transform,
                                     const struct ScraCloud *cloud,
                                     struct ScraCloud **out);

// Symmetric Chamfer distance; `clip` ≤ 0 disables clipping.
//
// # Safety
// `a` and `b` must be live handles; `out` must be writable.
enum ScraStatus scra_chamfer(const struct ScraCloud *a,
                             const struct ScraCloud *b,
                             double clip,
                             double *out);

// Point-to-point ICP from the identity.
//
// # Safety
// `source` and `target` must be live handles; `out` must be writable.
enum ScraStatus scra_icp(const struct ScraCloud *source,
                         const struct ScraCloud *target,
                         size_t max_iterations,
                         double tolerance,
                         struct ScraRegistration *out);

// Adam on the six transform parameters from the identity.
//
// # Safety
// `source`, `target` and `options` must be valid; `out` must be writable.
enum ScraStatus scra_direct_optimize(const struct ScraCloud *source,
                                     const struct ScraCloud *target,
                                     const struct ScraTestTimeOptions *options,
                                     struct ScraRegistration *out);

// Loads the decoder from a checkpoint written by `scralign train`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum ScraStatus scra_model_load(const char *path, struct ScraModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or a handle from this library not yet freed.
void scra_model_free(struct ScraModel *model);

// Latent size of a model, or 0 for null.
//
// # Safety
// `model` must be null or a live handle.
size_t scra_model_latent_dim(const struct ScraModel *model);

// Registers `source` to `target` by optimizing a fresh latent code against
// the frozen decoder.
//
// # Safety
// All pointers must be valid; `out` must be writable.
enum ScraStatus scra_register(const struct ScraModel *model,
                              const struct ScraCloud *source,
                              const struct ScraCloud *target,
                              const struct ScraTestTimeOptions *options,
                              struct ScraRegistration *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCRALIGN_H */
