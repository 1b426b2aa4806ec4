#ifndef MDC_TRACK_H
#define MDC_TRACK_H

/* Generated by cbindgen from crates/ffi/src; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum MdcStatus {
  MDC_STATUS_OK = 0,
  MDC_STATUS_IO = 1,
  MDC_STATUS_CONFIG = 2,
  MDC_STATUS_SCHEMA = 3,
  MDC_STATUS_ALIGNMENT = 4,
  MDC_STATUS_METRICS = 5,
  MDC_STATUS_NULL_POINTER = 10,
  MDC_STATUS_INVALID_ARGUMENT = 11,
  MDC_STATUS_OUT_OF_RANGE = 12,
  MDC_STATUS_PANIC = 99,
} MdcStatus;

typedef enum MdcCategory {
  MDC_CATEGORY_SINGLE = 0,
  MDC_CATEGORY_CONVENTIONAL_TWO = 1,
  MDC_CATEGORY_CLOSE_BY_TWO = 2,
} MdcCategory;

typedef enum MdcStage {
  MDC_STAGE_FINDER = 0,
  MDC_STAGE_FITTER = 1,
} MdcStage;

// Run configuration.
typedef struct MdcConfig MdcConfig;

// Simulated or loaded events.
typedef struct MdcDataset MdcDataset;

// Finding and fitting reports.
typedef struct MdcEvaluation MdcEvaluation;

// Reconstructed tracks of a dataset, finder rows then fitter rows per event.
typedef struct MdcReco MdcReco;

// Helix parameters at the point of closest approach to the origin.
typedef struct MdcHelix {
  // cm
  double d_r;
  // rad, in [0, 2pi)
  double phi0;
  // charge / pT, (GeV/c)^-1
  double kappa;
  // cm
  double d_z;
  double tan_lambda;
} MdcHelix;

typedef struct MdcTrack {
  uint64_t event_id;
  uint32_t reco_id;
  enum MdcStage stage;
  size_t n_hits;
  struct MdcHelix helix;
  // NaN for finder rows.
  double chi2;
  int64_t ndf;
  bool converged;
  bool z_constrained;
} MdcTrack;

// A rate with its central 68.27% interval. `valid` is false when the
// denominator is zero.
typedef struct MdcRate {
  bool valid;
  uint64_t numerator;
  uint64_t denominator;
  double value;
  double lo;
  double hi;
} MdcRate;

typedef struct MdcSummary {
  uint64_t n_detectable;
  uint64_t n_matched;
  uint64_t n_matched_q;
  uint64_t n_wrong_q;
  uint64_t n_clone;
  uint64_t n_fake;
  uint64_t n_reco;
  struct MdcRate eps_track;
  struct MdcRate eps_track_q;
  struct MdcRate r_wrong_q;
  struct MdcRate r_clone;
  struct MdcRate r_fake;
  // NaN when fewer than two residuals are available.
  double pt_resolution;
  uint64_t n_resolution;
} MdcSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *mdc_version(void);

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *mdc_last_error_message(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be NULL or a string returned by this library, not yet freed.
void mdc_string_free(char *s);

// Default configuration: no seed, 1 T field, default detector and
// algorithm settings.
//
// # Safety
// `out` must be a valid pointer.
enum MdcStatus mdc_config_new(struct MdcConfig **out);

// Parses a TOML configuration held in memory.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a valid pointer.
enum MdcStatus mdc_config_parse(const char *toml, struct MdcConfig **out);

// Reads a TOML configuration file.
//
// # Safety
// `file` must be a NUL-terminated string and `out` a valid pointer.
enum MdcStatus mdc_config_load(const char *file, struct MdcConfig **out);

// # Safety
// `cfg` must be NULL or a handle from this library, not yet freed.
void mdc_config_free(struct MdcConfig *cfg);

// Sets the generator seed.
//
// # Safety
// `cfg` must be a valid handle.
enum MdcStatus mdc_config_set_seed(struct MdcConfig *cfg, uint64_t seed);

// Sets the event category and count used by [`mdc_dataset_generate`].
//
// # Safety
// `cfg` must be a valid handle.
enum MdcStatus mdc_config_set_events(struct MdcConfig *cfg,
                                     enum MdcCategory category,
                                     uint64_t events);

// Sets the mean noise hits per event and the drift resolution in cm.
//
// # Safety
// `cfg` must be a valid handle.
enum MdcStatus mdc_config_set_detector(struct MdcConfig *cfg,
                                       double noise_rate,
                                       double sigma_drift);

// Simulates the configured events. Requires a seed.
//
// # Safety
// `cfg` must be a valid handle and `out` a valid pointer.
enum MdcStatus mdc_dataset_generate(const struct MdcConfig *cfg, struct MdcDataset **out);

// Reads a hit CSV file. With `strict`, any validation finding fails the
// call with `MDC_STATUS_SCHEMA`.
//
// # Safety
// `cfg` must be a valid handle, `file` a NUL-terminated string and `out`
// a valid pointer.
enum MdcStatus mdc_dataset_read(const struct MdcConfig *cfg,
                                const char *file,
                                bool strict,
                                struct MdcDataset **out);

// Writes a hit CSV file; the row count goes to `rows` when not NULL.
//
// # Safety
// `ds` must be a valid handle, `file` a NUL-terminated string and `rows`
// NULL or valid.
enum MdcStatus mdc_dataset_write(const struct MdcDataset *ds, const char *file, size_t *rows);

// Number of events and total number of hits.
//
// # Safety
// `ds` must be a valid handle; `events` and `hits` NULL or valid.
enum MdcStatus mdc_dataset_size(const struct MdcDataset *ds, size_t *events, size_t *hits);

// # Safety
// `ds` must be NULL or a handle from this library, not yet freed.
void mdc_dataset_free(struct MdcDataset *ds);

// Runs the finder and, when `fit` is set, the fitter on every event.
//
// # Safety
// `cfg` and `ds` must be valid handles and `out` a valid pointer.
enum MdcStatus mdc_reconstruct(const struct MdcConfig *cfg,
                               const struct MdcDataset *ds,
                               bool fit,
                               struct MdcReco **out);

// Reads a reco CSV file.
//
// # Safety
// `file` must be a NUL-terminated string and `out` a valid pointer.
enum MdcStatus mdc_reco_read(const char *file, struct MdcReco **out);

// Writes a reco CSV file; the row count goes to `rows` when not NULL.
//
// # Safety
// `reco` must be a valid handle, `file` a NUL-terminated string and
// `rows` NULL or valid.
enum MdcStatus mdc_reco_write(const struct MdcReco *reco, const char *file, size_t *rows);

// Number of track rows.
//
// # Safety
// `reco` must be a valid handle and `len` a valid pointer.
enum MdcStatus mdc_reco_len(const struct MdcReco *reco, size_t *len);

// Copies track row `index` into `out`.
//
// # Safety
// `reco` must be a valid handle and `out` a valid pointer.
enum MdcStatus mdc_reco_get(const struct MdcReco *reco, size_t index, struct MdcTrack *out);

// # Safety
// `reco` must be NULL or a handle from this library, not yet freed.
void mdc_reco_free(struct MdcReco *reco);

// Scores `reco` against the truth of `ds` with the configured matching
// rule and bins.
//
// # Safety
// `cfg`, `ds` and `reco` must be valid handles and `out` a valid pointer.
enum MdcStatus mdc_evaluate(const struct MdcConfig *cfg,
                            const struct MdcDataset *ds,
                            const struct MdcReco *reco,
                            struct MdcEvaluation **out);

// Unbinned numbers of one stage. `MDC_STATUS_OUT_OF_RANGE` when the
// fitter stage was requested but the reco tracks have no fitter rows.
//
// # Safety
// `eval` must be a valid handle and `out` a valid pointer.
enum MdcStatus mdc_evaluation_summary(const struct MdcEvaluation *eval,
                                      enum MdcStage stage,
                                      struct MdcSummary *out);

// Full report of one stage, binned values included, as `key=value` lines.
// Release the string with [`mdc_string_free`].
//
// # Safety
// `eval` must be a valid handle and `out` a valid pointer.
enum MdcStatus mdc_evaluation_key_values(const struct MdcEvaluation *eval,
                                         enum MdcStage stage,
                                         char **out);

// # Safety
// `eval` must be NULL or a handle from this library, not yet freed.
void mdc_evaluation_free(struct MdcEvaluation *eval);

// Helix through a charged particle at `position` (cm) with `momentum`
// (GeV/c) in a field of `b_field` tesla.
//
// # Safety
// `position` and `momentum` must point to 3 doubles, `out` must be valid.
enum MdcStatus mdc_helix_from_state(const double *position,
                                    const double *momentum,
                                    int32_t charge,
                                    double b_field,
                                    struct MdcHelix *out);

// Position, momentum and charge at the point of closest approach.
//
// # Safety
// `helix` must be valid, `position` and `momentum` must point to 3
// writable doubles and `charge` must be valid.
enum MdcStatus mdc_helix_to_state(const struct MdcHelix *helix,
                                  double b_field,
                                  double *position,
                                  double *momentum,
                                  int32_t *charge);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MDC_TRACK_H */
