#ifndef DIFFSIM2D_H
#define DIFFSIM2D_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DsStatus {
  DS_STATUS_OK = 0,
  /*
   Unclassified failure (I/O and similar).
   */
  DS_STATUS_OTHER = 1,
  /*
   Malformed or inconsistent scene input.
   */
  DS_STATUS_INPUT = 2,
  /*
   A forward, adjoint or line-search solve failed.
   */
  DS_STATUS_SOLVER = 3,
  /*
   A gradient check exceeded its tolerance.
   */
  DS_STATUS_GRAD_CHECK = 4,
  DS_STATUS_NULL_POINTER = 5,
  DS_STATUS_INVALID_UTF8 = 6,
  /*
   Buffer too small, or index out of range.
   */
  DS_STATUS_OUT_OF_RANGE = 7,
  DS_STATUS_PANIC = 8,
} DsStatus;

/*
 Parameter blocks, in gradient order.
 */
typedef enum DsBlock {
  DS_BLOCK_SHAPE = 0,
  DS_BLOCK_LAMBDA = 1,
  DS_BLOCK_MU = 2,
  DS_BLOCK_GAMMA = 3,
  DS_BLOCK_DAMPING = 4,
  DS_BLOCK_U0 = 5,
  DS_BLOCK_V0 = 6,
} DsBlock;

typedef struct DsEvaluation DsEvaluation;

typedef struct DsRun DsRun;

typedef struct DsScene DsScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer is
 valid until the next call into the library on the same thread.
 */
const char *ds_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *ds_version(void);

/*
 Loads and validates a scene file.
 */
enum DsStatus ds_scene_load(const char *path, struct DsScene **out);

/*
 Parses a scene from a JSON string; mesh file references are resolved
 against the working directory.
 */
enum DsStatus ds_scene_from_json(const char *json, struct DsScene **out);

void ds_scene_free(struct DsScene *scene);

/*
 Serializes the scene with all defaults explicit. The string must be
 released with [`ds_string_free`].
 */
enum DsStatus ds_scene_to_json(const struct DsScene *scene, char **out);

void ds_string_free(char *s);

/*
 Number of entries in a parameter block.
 */
enum DsStatus ds_scene_param_len(const struct DsScene *scene, enum DsBlock block, size_t *len);

enum DsStatus ds_scene_get_params(const struct DsScene *scene,
                                  enum DsBlock block,
                                  double *buf,
                                  size_t len);

/*
 Replaces one parameter block; `len` must equal the block length.
 */
enum DsStatus ds_scene_set_params(struct DsScene *scene,
                                  enum DsBlock block,
                                  const double *buf,
                                  size_t len);

/*
 Forward simulation (a static scene stores one state with zero velocity).
 */
enum DsStatus ds_simulate(const struct DsScene *scene, struct DsRun **out);

void ds_run_free(struct DsRun *run);

/*
 Number of stored states and DOFs per state.
 */
enum DsStatus ds_run_shape(const struct DsRun *run, size_t *n_states, size_t *n_dofs);

/*
 Copies displacement and velocity of state `index`; either buffer may be null.
 */
enum DsStatus ds_run_state(const struct DsRun *run, size_t index, double *u, double *v, size_t len);

/*
 Objective value and adjoint gradient of the scene's objective.
 */
enum DsStatus ds_evaluate(const struct DsScene *scene, struct DsEvaluation **out);

void ds_evaluation_free(struct DsEvaluation *ev);

enum DsStatus ds_evaluation_value(const struct DsEvaluation *ev, double *value);

/*
 Wall times in seconds of the forward solve and of the adjoint pass.
 */
enum DsStatus ds_evaluation_times(const struct DsEvaluation *ev, double *forward, double *adjoint);

enum DsStatus ds_evaluation_gradient(const struct DsEvaluation *ev,
                                     enum DsBlock block,
                                     double *buf,
                                     size_t len);

/*
 Finite-difference check of one block over `directions` random directions.
 Returns [`DsStatus::GradCheck`] when any direction exceeds the tolerance;
 `max_rel_error` is written in both cases.
 */
enum DsStatus ds_grad_check(const struct DsScene *scene,
                            enum DsBlock block,
                            size_t directions,
                            uint64_t seed,
                            double *max_rel_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIFFSIM2D_H */
