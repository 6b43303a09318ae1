#ifndef HRC_H
#define HRC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HrcStatus {
  HRC_STATUS_OK = 0,
  HRC_STATUS_NULL_POINTER = 1,
  HRC_STATUS_INVALID_ARGUMENT = 2,
  HRC_STATUS_DIMENSION_MISMATCH = 3,
  HRC_STATUS_UNREACHABLE = 4,
  HRC_STATUS_NO_CONVERGENCE = 5,
  HRC_STATUS_PARSE = 6,
  HRC_STATUS_CONFIG = 7,
  HRC_STATUS_RUNTIME = 8,
  HRC_STATUS_STATISTICS = 9,
  HRC_STATUS_BUFFER_TOO_SMALL = 10,
  HRC_STATUS_PANIC = 11,
} HrcStatus;

typedef enum HrcShapeKind {
  HRC_SHAPE_KIND_SPHERE = 0,
  HRC_SHAPE_KIND_AABB = 1,
  HRC_SHAPE_KIND_CAPSULE = 2,
} HrcShapeKind;

typedef enum HrcAlternative {
  HRC_ALTERNATIVE_LESS = 0,
  HRC_ALTERNATIVE_GREATER = 1,
  HRC_ALTERNATIVE_TWO_SIDED = 2,
} HrcAlternative;

typedef enum HrcTails {
  HRC_TAILS_ONE = 1,
  HRC_TAILS_TWO = 2,
} HrcTails;

typedef struct HrcRobotModel HrcRobotModel;

typedef struct HrcSimulation HrcSimulation;

typedef struct HrcWorld HrcWorld;

/**
 * Position in meters and a `(w, x, y, z)` unit quaternion.
 */
typedef struct HrcPose {
  double position[3];
  double orientation[4];
} HrcPose;

/**
 * Sphere: `dims[0]` radius. Box: `dims` half extents. Capsule: `dims[0]` radius, `dims[1]` half length.
 */
typedef struct HrcShape {
  enum HrcShapeKind kind;
  double dims[3];
} HrcShape;

typedef struct HrcWilcoxonResult {
  double w_plus;
  double w_minus;
  double statistic;
  double p_value;
  size_t n_effective;
  bool exact;
} HrcWilcoxonResult;

/**
 * Headless run settings over the bundled scenario.
 */
typedef struct HrcRunOptions {
  double delta_t;
  double tick;
  uint64_t seed;
  /**
   * 0 shows the anticipated motion (C1), 1 does not (C2).
   */
  uint32_t condition;
  double collision_pause;
  double assembly_seconds;
  double p_block;
  double p_intervene;
} HrcRunOptions;

typedef struct HrcTrialSummary {
  size_t steps;
  size_t collisions;
  size_t interventions;
  double total_time;
} HrcTrialSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message into `buf` as a NUL-terminated string.
 *
 * Returns the message length in bytes excluding the terminator; pass a null
 * `buf` to query the length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t hrc_last_error_message(char *buf, size_t len);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum HrcStatus hrc_robot_model_bundled(struct HrcRobotModel **out);

/**
 * # Safety
 * `json` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
 */
enum HrcStatus hrc_robot_model_from_json(const char *json, struct HrcRobotModel **out);

/**
 * # Safety
 * `model` must come from a `hrc_robot_model_*` constructor or be null.
 */
void hrc_robot_model_free(struct HrcRobotModel *model);

/**
 * # Safety
 * `model` must be a live handle.
 */
size_t hrc_robot_model_dof(const struct HrcRobotModel *model);

/**
 * # Safety
 * `model` must be a live handle, `q` point to `n` values and `out` be valid.
 */
enum HrcStatus hrc_forward_kinematics(const struct HrcRobotModel *model,
                                      const double *q,
                                      size_t n,
                                      struct HrcPose *out);

/**
 * Damped least-squares IK with default options. Writes `n` joint values to `q_out`.
 *
 * # Safety
 * `model` must be a live handle, `seed` and `q_out` point to `n` values, `target` be valid.
 * `iterations` may be null.
 */
enum HrcStatus hrc_inverse_kinematics(const struct HrcRobotModel *model,
                                      const struct HrcPose *target,
                                      const double *seed,
                                      size_t n,
                                      double *q_out,
                                      size_t *iterations);

/**
 * # Safety
 * `a`, `pose_a`, `b`, `pose_b` and `out` must be valid pointers.
 */
enum HrcStatus hrc_collide(const struct HrcShape *a,
                           const struct HrcPose *pose_a,
                           const struct HrcShape *b,
                           const struct HrcPose *pose_b,
                           bool *out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum HrcStatus hrc_world_sample(struct HrcWorld **out);

/**
 * # Safety
 * `json` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
 */
enum HrcStatus hrc_world_from_json(const char *json, struct HrcWorld **out);

/**
 * # Safety
 * `world` must come from a `hrc_world_*` constructor or be null.
 */
void hrc_world_free(struct HrcWorld *world);

/**
 * Number of (link, object) contacts for configuration `q`.
 *
 * # Safety
 * Handles must be live, `q` point to `n` values and `out` be valid.
 */
enum HrcStatus hrc_world_arm_contacts(const struct HrcWorld *world,
                                      const struct HrcRobotModel *model,
                                      const double *q,
                                      size_t n,
                                      size_t *out);

/**
 * Paired signed-rank test on `d = c1 - c2`.
 *
 * # Safety
 * `c1` and `c2` must point to `n` values and `out` be valid.
 */
enum HrcStatus hrc_wilcoxon_signed_rank(const double *c1,
                                        const double *c2,
                                        size_t n,
                                        enum HrcAlternative alternative,
                                        struct HrcWilcoxonResult *out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum HrcStatus hrc_critical_value(size_t n, double alpha, enum HrcTails tails, uint32_t *out);

/**
 * Defaults matching the command-line tool.
 */
struct HrcRunOptions hrc_run_options_default(void);

/**
 * Runs the bundled scenario to completion.
 *
 * # Safety
 * `options` and `out` must be valid pointers.
 */
enum HrcStatus hrc_run_headless(const struct HrcRunOptions *options, struct HrcTrialSummary *out);

/**
 * Creates a step-wise simulation of the bundled scenario driven by the scripted human.
 *
 * # Safety
 * `options` and `out` must be valid pointers.
 */
enum HrcStatus hrc_simulation_new(const struct HrcRunOptions *options, struct HrcSimulation **out);

/**
 * # Safety
 * `sim` must come from [`hrc_simulation_new`] or be null.
 */
void hrc_simulation_free(struct HrcSimulation *sim);

/**
 * Advances one tick; `finished` is set once the plan is done.
 *
 * # Safety
 * `sim` must be a live handle; `finished` may be null.
 */
enum HrcStatus hrc_simulation_step(struct HrcSimulation *sim, bool *finished);

/**
 * Queues a button press for the next tick.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum HrcStatus hrc_simulation_user_input(struct HrcSimulation *sim, bool value);

/**
 * # Safety
 * `sim` must be a live handle.
 */
double hrc_simulation_clock(const struct HrcSimulation *sim);

/**
 * Plan cursor (1-based, `N + 1` when done) and whether the plan awaits input.
 *
 * # Safety
 * `sim` must be a live handle; outputs may be null.
 */
enum HrcStatus hrc_simulation_plan_status(const struct HrcSimulation *sim,
                                          size_t *cursor,
                                          bool *awaiting_input);

/**
 * Copies the current joint configuration into `q_out` (`n` must equal the model's DOF).
 *
 * # Safety
 * `sim` must be a live handle and `q_out` point to `n` writable values.
 */
enum HrcStatus hrc_simulation_joint_state(const struct HrcSimulation *sim, double *q_out, size_t n);

/**
 * Writes the NDJSON event log so far. `needed` receives the byte length;
 * returns `BufferTooSmall` when `len` is short (pass a null `buf` to query).
 *
 * # Safety
 * `sim` must be a live handle, `buf` null or `len` writable bytes, `needed` valid.
 */
enum HrcStatus hrc_simulation_event_log(const struct HrcSimulation *sim,
                                        uint8_t *buf,
                                        size_t len,
                                        size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HRC_H */
