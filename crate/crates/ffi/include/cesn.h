#ifndef CESN_H
#define CESN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define CESN_POLICY_ADAPTIVE 0

#define CESN_POLICY_FIXED 1

#define CESN_PHASE_PRE_CHECKPOINT 0

#define CESN_PHASE_POST_CHECKPOINT 1

#define CESN_PHASE_DONE 2

typedef enum CesnStatus {
  CESN_OK = 0,
  CESN_NULL_POINTER = 1,
  CESN_INVALID_ARGUMENT = 2,
  CESN_IO = 3,
  CESN_PARSE = 4,
  CESN_DIMENSION_MISMATCH = 5,
  CESN_NUMERICAL = 6,
  CESN_BUFFER_TOO_SMALL = 7,
  CESN_TRIAL_DONE = 8,
  CESN_PANIC = 9,
} CesnStatus;

// Trained model.
typedef struct CesnModel CesnModel;

// Shared-control trial on the reference plant.
typedef struct CesnTrial CesnTrial;

// One tick of a trial.
typedef struct CesnStepRecord {
  size_t t;
  double position[2];
  double u_human[2];
  double u_robot[2];
  double u_shared[2];
  double omega;
  double half_width;
  // One of the `CESN_PHASE_*` constants.
  int32_t phase;
} CesnStepRecord;

// Outcome of a trial so far.
typedef struct CesnTrialStatus {
  size_t steps;
  bool done;
  bool goal_reached;
  bool collided;
  // Sum of human command norms; 0 before the first step.
  double effort;
} CesnTrialStatus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a model file written by `cesn train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum CesnStatus cesn_model_load(const char *path, struct CesnModel **out);

// Parses a model from the text of a model file.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum CesnStatus cesn_model_load_str(const char *text, struct CesnModel **out);

// Releases a model. Trials created from it stay valid. Null is ignored.
//
// # Safety
// `model` must come from `cesn_model_load*` and not be freed twice.
void cesn_model_free(struct CesnModel *model);

// Context channels, output channels and training duration.
//
// # Safety
// All pointers must be valid; any output pointer may be null to skip it.
enum CesnStatus cesn_model_dims(const struct CesnModel *model,
                                size_t *context_dim,
                                size_t *output_dim,
                                size_t *horizon);

// Generates `horizon` steps for `context`.
//
// `mean_out` and `half_width_out` each need `horizon * output_dim` values.
//
// # Safety
// Buffers must be valid for the given lengths.
enum CesnStatus cesn_generate(const struct CesnModel *model,
                              const double *context,
                              size_t context_len,
                              size_t horizon,
                              double *mean_out,
                              double *half_width_out,
                              size_t out_len);

// Remaining `remaining` steps conditioned on a captured state at `step`.
//
// # Safety
// Buffers must be valid for the given lengths.
enum CesnStatus cesn_condition_at(const struct CesnModel *model,
                                  const double *state,
                                  size_t state_len,
                                  size_t step,
                                  size_t remaining,
                                  double *mean_out,
                                  double *half_width_out,
                                  size_t out_len);

// Human weight in [0, 1] for a half-width vector under the model's calibration.
//
// # Safety
// `half_width` must hold `len` values and `out` be valid.
enum CesnStatus cesn_pi_to_weight(const struct CesnModel *model,
                                  const double *half_width,
                                  size_t len,
                                  double *out);

// `omega * u_h + (1 - omega) * u_r`.
//
// # Safety
// Each pointer must reference two doubles.
enum CesnStatus cesn_blend(const double *u_h, const double *u_r, double omega, double *out);

// Two-sided Student-t critical value for `dof` degrees of freedom.
//
// # Safety
// `out` must be valid.
enum CesnStatus cesn_t_critical(double dof, double alpha, double *out);

// Starts a trial on the reference plant.
//
// `policy` is `CESN_POLICY_ADAPTIVE` or `CESN_POLICY_FIXED`; `fixed_omega` is
// only read for the fixed policy. The trial keeps the model alive.
//
// # Safety
// `model` must be a live handle and `out` valid.
enum CesnStatus cesn_trial_new(const struct CesnModel *model,
                               int32_t policy,
                               double fixed_omega,
                               struct CesnTrial **out);

// Advances one tick with human command `(hx, hy)`.
//
// Returns `CESN_TRIAL_DONE` without touching `record` once the trial has ended.
//
// # Safety
// `trial` must be a live handle; `record` may be null.
enum CesnStatus cesn_trial_step(struct CesnTrial *trial,
                                double hx,
                                double hy,
                                struct CesnStepRecord *record);

// # Safety
// `trial` must be a live handle and `out` valid.
enum CesnStatus cesn_trial_status(const struct CesnTrial *trial, struct CesnTrialStatus *out);

// Releases a trial. Null is ignored.
//
// # Safety
// `trial` must come from `cesn_trial_new` and not be freed twice.
void cesn_trial_free(struct CesnTrial *trial);

// Message of the last failed call on this thread; empty after a success.
// Valid until the next `cesn_*` call on the same thread.
const char *cesn_last_error_message(void);

// Library version, e.g. "0.1.0". Static storage.
const char *cesn_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CESN_H */
