#ifndef LIO_H
#define LIO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Values are stable.
typedef enum LioStatus {
  LIO_STATUS_OK = 0,
  LIO_STATUS_NULL_POINTER = 1,
  LIO_STATUS_INVALID_ARGUMENT = 2,
  LIO_STATUS_CONFIG = 3,
  LIO_STATUS_IO = 4,
  LIO_STATUS_PARSE = 5,
  LIO_STATUS_DATA = 6,
  LIO_STATUS_DOMAIN = 7,
  LIO_STATUS_NUMERICAL = 8,
  LIO_STATUS_PANIC = 9,
} LioStatus;

// Which trajectory of a run to read.
typedef enum LioTrajectory {
  LIO_TRAJECTORY_ODOMETRY = 0,
  LIO_TRAJECTORY_MAPPED = 1,
} LioTrajectory;

// Pipeline configuration handle.
typedef struct LioConfig LioConfig;

// Output of one pipeline run.
typedef struct LioRun LioRun;

// A timestamped pose; quaternion in `x y z w` order.
typedef struct LioPose {
  double t;
  double position[3];
  double quaternion[4];
} LioPose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a
// successful call. Valid until the next call on the same thread.
const char *lio_last_error(void);

// Default configuration. Release with [`lio_config_free`].
struct LioConfig *lio_config_new(void);

// Parses TOML text into a new configuration handle.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a valid pointer.
enum LioStatus lio_config_from_toml(const char *toml, struct LioConfig **out);

// # Safety
// `cfg` must come from this library and not be used afterwards. Null is
// ignored.
void lio_config_free(struct LioConfig *cfg);

// Toggles the ablation switches: de-skewing, online extrinsic estimation
// and the mapping stage.
//
// # Safety
// `cfg` must be a live handle.
enum LioStatus lio_config_set_modes(struct LioConfig *cfg,
                                    bool deskew,
                                    bool estimate_extrinsic,
                                    bool mapping);

// Synthesizes the dataset described by the configuration's `sim` section
// into `dir`, overriding its seed.
//
// # Safety
// `cfg` must be a live handle and `dir` a NUL-terminated path.
enum LioStatus lio_simulate(const struct LioConfig *cfg, const char *dir, uint64_t seed);

// Runs the pipeline on a dataset directory. When `out_dir` is non-null the
// output files are written there. Release the result with
// [`lio_run_free`].
//
// # Safety
// `cfg` must be a live handle, `dataset` a NUL-terminated path, `out_dir`
// null or a NUL-terminated path, and `out` a valid pointer.
enum LioStatus lio_run(const struct LioConfig *cfg,
                       const char *dataset,
                       const char *out_dir,
                       struct LioRun **out);

// # Safety
// `run` must come from [`lio_run`] and not be used afterwards. Null is
// ignored.
void lio_run_free(struct LioRun *run);

// Number of poses in a trajectory; 0 for a null handle.
//
// # Safety
// `run` must be null or a live handle.
size_t lio_run_pose_count(const struct LioRun *run, enum LioTrajectory which);

// Copies pose `index` of a trajectory (lidar frame in world) into `out`.
//
// # Safety
// `run` must be a live handle and `out` a valid pointer.
enum LioStatus lio_run_pose(const struct LioRun *run,
                            enum LioTrajectory which,
                            size_t index,
                            struct LioPose *out);

// Number of warnings the run produced.
//
// # Safety
// `run` must be null or a live handle.
size_t lio_run_warning_count(const struct LioRun *run);

// Aligns the TUM trajectory at `estimate` to the one at `groundtruth` and
// writes the translation (m) and rotation (rad) RMSE.
//
// # Safety
// Paths must be NUL-terminated strings; outputs valid pointers.
enum LioStatus lio_eval(const char *estimate,
                        const char *groundtruth,
                        double max_dt,
                        double *translation_rmse,
                        double *rotation_rmse);

// Runs the oracle suites; writes how many checks ran and passed.
//
// # Safety
// Outputs must be valid pointers.
enum LioStatus lio_selftest(uint64_t seed, size_t *total, size_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LIO_H */
