#ifndef CINEFLOW_H
#define CINEFLOW_H

/* Generated by cbindgen from the cineflow-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call in this API.
typedef enum CfStatus {
  // The call succeeded.
  CF_STATUS_OK = 0,
  // A required pointer argument was null.
  CF_STATUS_NULL_ARGUMENT = 1,
  // An argument was structurally valid but semantically rejected
  // (bad dimensions, non-finite values, invalid parameters, ...).
  CF_STATUS_INVALID_ARGUMENT = 2,
  // The operating system reported an I/O failure.
  CF_STATUS_IO = 3,
  // A file was read but its contents are not a valid artifact.
  CF_STATUS_BAD_DATA = 4,
  // The iteration diverged to non-finite values.
  CF_STATUS_DIVERGED = 5,
  // An internal panic was caught at the boundary.
  CF_STATUS_PANIC = 6,
} CfStatus;

// Which reconstruction model to run.
typedef enum CfModel {
  // Frame-wise: spatial regularization only, frames independent.
  CF_MODEL_FW = 0,
  // Temporal difference: flow term with the velocity frozen at zero.
  CF_MODEL_DT = 1,
  // Joint optical flow: alternates image and velocity estimation.
  CF_MODEL_OF = 2,
  // Optical flow with the velocity frozen at a supplied reference field.
  CF_MODEL_CHEAT_OF = 3,
} CfModel;

// How the flow term couples the real and imaginary image channels.
typedef enum CfFlowMode {
  // Complex transport with real/imaginary interchange (default).
  CF_FLOW_MODE_COMPLEX = 0,
  // Each channel advected independently by its own velocity part.
  CF_FLOW_MODE_DECOUPLED = 1,
  // Both channels advected by the real velocity part only.
  CF_FLOW_MODE_SHARED_REAL = 2,
} CfFlowMode;

// Per-coil complex sensitivity maps (opaque).
typedef struct CfCoilMaps CfCoilMaps;

// A complex-valued image sequence (opaque).
typedef struct CfImageSequence CfImageSequence;

// Undersampled multi-coil k-space measurements with their sampling mask
// (opaque).
typedef struct CfKSpace CfKSpace;

// The output of a reconstruction: image sequence, velocity field, and the
// iteration trace (opaque).
typedef struct CfReconstruction CfReconstruction;

// A complex-valued velocity field (opaque).
typedef struct CfVelocityField CfVelocityField;

// Weights and Huber widths of the variational objective.
typedef struct CfModelParams {
  // Weight of the spatial image regularizer.
  double alpha1;
  // Weight of the spatial velocity regularizer.
  double alpha2;
  // Weight of the flow-residual coupling term.
  double alpha3;
  // Huber width for the image regularizer.
  double eps1;
  // Huber width for the velocity regularizer.
  double eps2;
  // Huber width for the flow term.
  double eps3;
  // Channel coupling used by the flow term.
  enum CfFlowMode flow_mode;
} CfModelParams;

// Iteration budgets and stopping thresholds.
typedef struct CfSolverParams {
  // Initial Gaussian smoothing width for the outer schedule (pixels).
  double sigma;
  // Maximum outer (alternation) iterations.
  size_t n_outer;
  // Maximum inner iterations per image subproblem.
  size_t n_rho;
  // Maximum inner iterations per velocity subproblem.
  size_t n_v;
  // Relative-change threshold for early stopping.
  double delta;
} CfSolverParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on the calling thread.
//
// The pointer stays valid until the next failing call on the same thread.
// After a successful call the previous message is left in place; inspect
// it only when a call has just returned something other than `CF_STATUS_OK`.
const char *cf_last_error_message(void);

// Version of the library as a static string.
const char *cf_version(void);

// Writes the tuned default objective parameters for `model` into `out`.
enum CfStatus cf_model_params_default(enum CfModel model, struct CfModelParams *out);

// Writes the default solver parameters into `out`.
enum CfStatus cf_solver_params_default(struct CfSolverParams *out);

// Creates an image sequence from `2*nt*nx*ny` interleaved doubles.
enum CfStatus cf_image_sequence_new(size_t nt,
                                    size_t nx,
                                    size_t ny,
                                    const double *interleaved,
                                    struct CfImageSequence **out);

// Loads an image sequence from a file written by this library.
enum CfStatus cf_image_sequence_load(const char *path, struct CfImageSequence **out);

// Saves an image sequence to a file.
enum CfStatus cf_image_sequence_save(const struct CfImageSequence *seq, const char *path);

// Reports the dimensions `(nt, nx, ny)` of an image sequence.
enum CfStatus cf_image_sequence_dims(const struct CfImageSequence *seq,
                                     size_t *nt,
                                     size_t *nx,
                                     size_t *ny);

// Copies a sequence into `2*nt*nx*ny` interleaved doubles; `len` must be
// exactly that count.
enum CfStatus cf_image_sequence_copy(const struct CfImageSequence *seq,
                                     double *interleaved,
                                     size_t len);

// Releases an image sequence. Null is ignored.
void cf_image_sequence_free(struct CfImageSequence *seq);

// Loads a velocity field from a file written by this library.
enum CfStatus cf_velocity_field_load(const char *path, struct CfVelocityField **out);

// Saves a velocity field to a file.
enum CfStatus cf_velocity_field_save(const struct CfVelocityField *v, const char *path);

// Reports the dimensions `(nt, nx, ny)` of a velocity field.
enum CfStatus cf_velocity_field_dims(const struct CfVelocityField *v,
                                     size_t *nt,
                                     size_t *nx,
                                     size_t *ny);

// Releases a velocity field. Null is ignored.
void cf_velocity_field_free(struct CfVelocityField *v);

// Loads k-space measurements (with their sampling mask) from a file.
enum CfStatus cf_kspace_load(const char *path, struct CfKSpace **out);

// Reports the dimensions `(nt, nc, nx, ny)` of a k-space object.
enum CfStatus cf_kspace_dims(const struct CfKSpace *y,
                             size_t *nt,
                             size_t *nc,
                             size_t *nx,
                             size_t *ny);

// Releases a k-space object. Null is ignored.
void cf_kspace_free(struct CfKSpace *y);

// Loads coil sensitivity maps from a file.
enum CfStatus cf_coil_maps_load(const char *path, struct CfCoilMaps **out);

// Reports the dimensions `(nc, nx, ny)` of a set of coil maps.
enum CfStatus cf_coil_maps_dims(const struct CfCoilMaps *coils, size_t *nc, size_t *nx, size_t *ny);

// Releases coil maps. Null is ignored.
void cf_coil_maps_free(struct CfCoilMaps *coils);

// Reconstructs an image sequence (and, for the joint model, a velocity
// field) from undersampled measurements.
//
// `model_params` and `solver_params` may be null to use the tuned defaults
// for `model`. `reference_velocity` is required by `CF_MODEL_CHEAT_OF` and
// ignored by every other model.
enum CfStatus cf_reconstruct(const struct CfKSpace *y,
                             const struct CfCoilMaps *coils,
                             enum CfModel model,
                             const struct CfModelParams *model_params,
                             const struct CfSolverParams *solver_params,
                             const struct CfVelocityField *reference_velocity,
                             struct CfReconstruction **out);

// Clones the reconstructed image sequence out of a reconstruction.
enum CfStatus cf_reconstruction_image(const struct CfReconstruction *recon,
                                      struct CfImageSequence **out);

// Clones the estimated velocity field out of a reconstruction. Models that
// do not estimate motion report the zero field.
enum CfStatus cf_reconstruction_velocity(const struct CfReconstruction *recon,
                                         struct CfVelocityField **out);

// Renders the iteration trace as a CSV string. Free it with
// `cf_string_free`.
enum CfStatus cf_reconstruction_trace_csv(const struct CfReconstruction *recon, char **out);

// Releases a reconstruction. Null is ignored.
void cf_reconstruction_free(struct CfReconstruction *recon);

// Releases a string allocated by this library. Null is ignored.
void cf_string_free(char *s);

// Per-frame PSNR (dB) and SSIM between the magnitudes of `gt` and `rec`.
//
// `mask` is either null (score everywhere) or `nx*ny` bytes in row-major
// order where nonzero marks pixels to score. `psnr` and `ssim` are each
// either null or an `nt`-element output buffer; at least one must be
// non-null.
enum CfStatus cf_image_metrics(const struct CfImageSequence *gt,
                               const struct CfImageSequence *rec,
                               const uint8_t *mask,
                               double *psnr,
                               double *ssim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CINEFLOW_H */
