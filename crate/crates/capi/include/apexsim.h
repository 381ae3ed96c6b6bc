#ifndef APEXSIM_H
#define APEXSIM_H

/* Generated by cbindgen from apexsim-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible function.
typedef enum ApexsimStatus {
  APEXSIM_STATUS_OK = 0,
  APEXSIM_STATUS_NULL_POINTER = 1,
  APEXSIM_STATUS_INVALID_ARGUMENT = 2,
  APEXSIM_STATUS_IO = 3,
  APEXSIM_STATUS_NUMERICAL = 4,
  APEXSIM_STATUS_PANIC = 5,
} ApexsimStatus;

// Cost profile selector for controller construction.
typedef enum ApexsimCostPreset {
  APEXSIM_COST_PRESET_SAFE = 0,
  APEXSIM_COST_PRESET_AGGRESSIVE = 1,
} ApexsimCostPreset;

// Opaque sampling controller handle.
typedef struct ApexsimController ApexsimController;

// Opaque semi-parametric model handle.
typedef struct ApexsimModel ApexsimModel;

// Opaque plant handle: parameters plus the integrated state (vehicle
// and steering actuator).
typedef struct ApexsimPlant ApexsimPlant;

// Opaque track handle.
typedef struct ApexsimTrack ApexsimTrack;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message for this thread into `buf` (NUL
// terminated, truncated to `len`). Returns the full message length.
uintptr_t apexsim_last_error_message(char *buf, uintptr_t len);

// Load a model bundle directory (vehicle.toml + network.json +
// metadata.json).
enum ApexsimStatus apexsim_model_load(const char *bundle_dir, struct ApexsimModel **out);

void apexsim_model_free(struct ApexsimModel *model);

// Full semi-parametric state derivative for one state/control pair.
enum ApexsimStatus apexsim_model_predict(const struct ApexsimModel *model,
                                         const double *state,
                                         const double *control,
                                         double *out_derivative);

// Create a plant with default parameters, at rest at the origin.
enum ApexsimStatus apexsim_plant_new(struct ApexsimPlant **out);

// Create a plant from a TOML parameter file.
enum ApexsimStatus apexsim_plant_new_from_file(const char *config_path, struct ApexsimPlant **out);

void apexsim_plant_free(struct ApexsimPlant *plant);

// Replace mass and friction at runtime (other parameters unchanged).
enum ApexsimStatus apexsim_plant_modify(struct ApexsimPlant *plant, double mass, double mu);

// Reset the plant to a vehicle state (actuator recentered).
enum ApexsimStatus apexsim_plant_reset(struct ApexsimPlant *plant, const double *state);

// Advance the plant by one RK4 step and write the new state.
enum ApexsimStatus apexsim_plant_step(struct ApexsimPlant *plant,
                                      double accel,
                                      double steer,
                                      double dt,
                                      double *out_state);

// Load a track CSV (header `s,x,y,w_left,w_right`).
enum ApexsimStatus apexsim_track_load(const char *csv_path, struct ApexsimTrack **out);

void apexsim_track_free(struct ApexsimTrack *track);

// Project a position onto the track. Writes [s, lateral_offset,
// inside(0/1)].
enum ApexsimStatus apexsim_track_query(const struct ApexsimTrack *track,
                                       double x,
                                       double y,
                                       double *out_query);

// Create a sampling controller. Pass 0 for horizon/samples/lambda/
// sigmas/dt to keep the defaults.
enum ApexsimStatus apexsim_controller_new(uintptr_t horizon,
                                          uintptr_t samples,
                                          double lambda,
                                          double sigma_accel,
                                          double sigma_steer,
                                          double dt,
                                          uint64_t seed,
                                          enum ApexsimCostPreset preset,
                                          struct ApexsimController **out);

void apexsim_controller_free(struct ApexsimController *controller);

// Replan from the given state and write [accel, steer]. Returns
// Numerical when every sampled rollout diverged (a braking fallback is
// still written).
enum ApexsimStatus apexsim_controller_compute(struct ApexsimController *controller,
                                              const struct ApexsimModel *model,
                                              const struct ApexsimTrack *track,
                                              const double *state,
                                              double *out_control);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* APEXSIM_H */
