#ifndef ALCIM_H
#define ALCIM_H

/* Generated by cbindgen from alcim-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Access-counter selectors for `alcim_sim_counter`.
 */
typedef enum AlcimCounter {
  AlcimCounter_IcimRead = 0,
  AlcimCounter_IcimWrite = 1,
  AlcimCounter_OcimRead = 2,
  AlcimCounter_OcimWrite = 3,
  AlcimCounter_TmemRead = 4,
  AlcimCounter_TmemWrite = 5,
  AlcimCounter_MmemRead = 6,
  AlcimCounter_WbufAccess = 7,
  AlcimCounter_OffchipRead = 8,
  AlcimCounter_OffchipWrite = 9,
  AlcimCounter_Cycles = 10,
} AlcimCounter;

/**
 * Footprint accounting modes.
 */
typedef enum AlcimFootprintMode {
  AlcimFootprintMode_LayerByLayer = 0,
  AlcimFootprintMode_CrossLayer = 1,
  AlcimFootprintMode_Lpt = 2,
} AlcimFootprintMode;

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum AlcimStatus {
  AlcimStatus_Ok = 0,
  AlcimStatus_InvalidArgument = 1,
  AlcimStatus_ParseError = 2,
  AlcimStatus_Infeasible = 3,
  AlcimStatus_MaskMismatch = 4,
  AlcimStatus_VerifyFailed = 5,
  AlcimStatus_InternalError = 6,
} AlcimStatus;

typedef struct AlcimNetwork AlcimNetwork;

typedef struct AlcimPlan AlcimPlan;

typedef struct AlcimSim AlcimSim;

/**
 * Dataflow comparison ratios (relative energies and access counts).
 */
typedef struct AlcimRatios {
  double as_vs_al_energy;
  double ws_vs_as_energy;
  double baseline_vs_al_accesses;
  double baseline_vs_al_energy;
  double tc_overhead;
} AlcimRatios;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread. Valid until the next
 * failing call; do not free.
 */
const char *alcim_last_error(void);

/**
 * Library version as major*10000 + minor*100 + patch.
 */
uint32_t alcim_version(void);

/**
 * Frees a string returned by the library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void alcim_string_free(char *s);

/**
 * Builds a builtin network (`resnet18`, `resnet50`, `toy_vgg`).
 *
 * # Safety
 * `name` must be a valid NUL-terminated string; `out` must be writable.
 */
enum AlcimStatus alcim_network_builtin(const char *name,
                                       uint32_t input_side,
                                       struct AlcimNetwork **out);

/**
 * Parses a network descriptor from JSON text.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string; `out` must be writable.
 */
enum AlcimStatus alcim_network_from_json(const char *json, struct AlcimNetwork **out);

/**
 * # Safety
 * `net` must be null or a live network handle.
 */
uint32_t alcim_network_layer_count(const struct AlcimNetwork *net);

/**
 * # Safety
 * `net` must come from a network constructor and not be freed twice.
 */
void alcim_network_free(struct AlcimNetwork *net);

/**
 * Plans the tiling schedule for a network.
 *
 * # Safety
 * `net` must be a live network handle; `out` must be writable.
 */
enum AlcimStatus alcim_plan_create(const struct AlcimNetwork *net, struct AlcimPlan **out);

/**
 * # Safety
 * `plan` must be null or a live plan handle.
 */
uint32_t alcim_plan_tc_event_count(const struct AlcimPlan *plan);

/**
 * # Safety
 * `plan` must be null or a live plan handle.
 */
uint64_t alcim_plan_tmem_bytes(const struct AlcimPlan *plan);

/**
 * Serializes the plan to JSON; release with `alcim_string_free`.
 *
 * # Safety
 * `plan` must be a live plan handle; `out` must be writable.
 */
enum AlcimStatus alcim_plan_to_json(const struct AlcimPlan *plan, char **out);

/**
 * Re-derives the plan's invariants; returns the violation count.
 *
 * # Safety
 * `plan` and `net` must be live handles.
 */
uint32_t alcim_plan_validate(const struct AlcimPlan *plan, const struct AlcimNetwork *net);

/**
 * # Safety
 * `plan` must come from `alcim_plan_create` and not be freed twice.
 */
void alcim_plan_free(struct AlcimPlan *plan);

/**
 * Max live activation bytes under the given accounting mode.
 *
 * # Safety
 * `net` must be a live handle; `out` must be writable.
 */
enum AlcimStatus alcim_footprint_max(const struct AlcimNetwork *net,
                                     enum AlcimFootprintMode mode,
                                     uint64_t *out);

/**
 * Runs the simulator. With `count_only` nonzero, values are skipped and
 * no golden verification happens; otherwise a seed-derived input image is
 * executed and the output is verified against the golden model.
 *
 * # Safety
 * `net` and `plan` must be live handles; `out` must be writable.
 */
enum AlcimStatus alcim_sim_run(const struct AlcimNetwork *net,
                               const struct AlcimPlan *plan,
                               uint64_t seed,
                               double sparsity,
                               uint32_t weight_bits,
                               uint8_t count_only,
                               struct AlcimSim **out);

/**
 * # Safety
 * `sim` must be null or a live simulation handle.
 */
uint64_t alcim_sim_counter(const struct AlcimSim *sim, enum AlcimCounter counter);

/**
 * Nonzero when the run was verified bitwise against the golden model.
 *
 * # Safety
 * `sim` must be null or a live simulation handle.
 */
uint8_t alcim_sim_verified(const struct AlcimSim *sim);

/**
 * # Safety
 * `sim` must come from `alcim_sim_run` and not be freed twice.
 */
void alcim_sim_free(struct AlcimSim *sim);

/**
 * Dataflow comparison with the default energy table.
 *
 * # Safety
 * `net` and `plan` must be live handles; `out` must be writable.
 */
enum AlcimStatus alcim_compare_ratios(const struct AlcimNetwork *net,
                                      const struct AlcimPlan *plan,
                                      struct AlcimRatios *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALCIM_H */
