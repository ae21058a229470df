#ifndef HFFCLOCK_H
#define HFFCLOCK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HffStatus {
  HFF_STATUS_OK = 0,
  HFF_STATUS_NULL_POINTER = 1,
  HFF_STATUS_INVALID_ARGUMENT = 2,
  HFF_STATUS_CONFIG = 3,
  HFF_STATUS_NUMERICAL = 4,
  HFF_STATUS_IO = 5,
  HFF_STATUS_PANIC = 6,
} HffStatus;

typedef enum HffControllerKind {
  HFF_CONTROLLER_KIND_FREE_RUN = 0,
  HFF_CONTROLLER_KIND_FEEDBACK = 1,
  HFF_CONTROLLER_KIND_HFF_BLOCK = 2,
  HFF_CONTROLLER_KIND_HFF_MOVING = 3,
} HffControllerKind;

typedef enum HffCoeffMode {
  HFF_COEFF_MODE_PAPER_FORM = 0,
  HFF_COEFF_MODE_MMSE = 1,
} HffCoeffMode;

/**
 * Opaque cycle schedule.
 */
typedef struct HffSchedule HffSchedule;

/**
 * Opaque power spectrum.
 */
typedef struct HffSpectrum HffSpectrum;

/**
 * Controller description. `n` and `mode` are ignored by free-run and feedback.
 */
typedef struct HffController {
  enum HffControllerKind kind;
  size_t n;
  double gain;
  enum HffCoeffMode mode;
} HffController;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hff_version(void);

/**
 * Length in bytes of the last error message on this thread, excluding the
 * terminating NUL; 0 when there is none.
 */
size_t hff_last_error_length(void);

/**
 * Copies the last error message into `buf` (always NUL-terminated when
 * `len > 0`, truncated if needed). Returns the full message length.
 *
 * # Safety
 * `buf` must be valid for `len` bytes of writes, or null with `len == 0`.
 */
size_t hff_last_error_message(char *buf, size_t len);

/**
 * Power law `amplitude * (omega_low / w)^exponent` on `[omega_low, omega_cut]`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum HffStatus hff_spectrum_new(double exponent,
                                double amplitude,
                                double omega_low,
                                double omega_cut,
                                struct HffSpectrum **out_spectrum);

/**
 * # Safety
 * `spectrum` must come from [`hff_spectrum_new`] and not be used afterwards.
 */
void hff_spectrum_free(struct HffSpectrum *spectrum);

/**
 * Rescales so that the PSD equals `target` at `omega_ref`.
 *
 * # Safety
 * `spectrum` must be a live handle.
 */
enum HffStatus hff_spectrum_normalize(struct HffSpectrum *spectrum,
                                      double omega_ref,
                                      double target);

/**
 * # Safety
 * `spectrum` must be a live handle.
 */
enum HffStatus hff_spectrum_add_spur(struct HffSpectrum *spectrum, double omega, double power);

/**
 * Adds `count` spurs from `start` in steps of `step` (rad/s) carrying
 * `fraction` of the continuum variance in total.
 *
 * # Safety
 * `spectrum` must be a live handle.
 */
enum HffStatus hff_spectrum_add_spur_comb(struct HffSpectrum *spectrum,
                                          double start,
                                          double step,
                                          size_t count,
                                          double fraction);

/**
 * # Safety
 * `spectrum` must be a live handle and `out_value` writable.
 */
enum HffStatus hff_spectrum_psd(const struct HffSpectrum *spectrum,
                                double omega,
                                double *out_value);

/**
 * `<y(t)^2>`: continuum plus spur variance.
 *
 * # Safety
 * `spectrum` must be a live handle and `out_value` writable.
 */
enum HffStatus hff_spectrum_point_variance(const struct HffSpectrum *spectrum, double *out_value);

/**
 * Schedule of `n_cycles` cycles, each with windows of the given durations
 * packed back to back and followed by `dead_time`.
 *
 * # Safety
 * `durations` must point to `n_durations` readable doubles; `out_schedule`
 * must be writable.
 */
enum HffStatus hff_schedule_new(size_t n_cycles,
                                const double *durations,
                                size_t n_durations,
                                double dead_time,
                                struct HffSchedule **out_schedule);

/**
 * # Safety
 * `schedule` must come from [`hff_schedule_new`] and not be used afterwards.
 */
void hff_schedule_free(struct HffSchedule *schedule);

/**
 * Total number of windows, or 0 for a null handle.
 *
 * # Safety
 * `schedule` must be a live handle or null.
 */
size_t hff_schedule_n_windows(const struct HffSchedule *schedule);

/**
 * `Cov(y_k, y_l)` of two window samples.
 *
 * # Safety
 * `spectrum` must be a live handle and `out_value` writable.
 */
enum HffStatus hff_window_covariance(const struct HffSpectrum *spectrum,
                                     double start_k,
                                     double end_k,
                                     double start_l,
                                     double end_l,
                                     double *out_value);

/**
 * Covariance blocks for `n` windows predicting `y(t_c)`. `m_out` receives
 * the `n x n` matrix in row-major order, `f_out` the `n` cross terms.
 *
 * # Safety
 * `starts` and `ends` must hold `n` doubles, `m_out` `n*n`, `f_out` `n`, and
 * `sigma_cc_out` one.
 */
enum HffStatus hff_build_sigma(const struct HffSpectrum *spectrum,
                               const double *starts,
                               const double *ends,
                               size_t n,
                               double t_c,
                               double *m_out,
                               double *f_out,
                               double *sigma_cc_out);

/**
 * Closed-form correction accuracy for row-major blocks.
 *
 * # Safety
 * `m` must hold `n*n` doubles, `f` `n`, and `out_value` must be writable.
 */
enum HffStatus hff_accuracy_analytic(const double *m,
                                     const double *f,
                                     double sigma_cc,
                                     size_t n,
                                     double gain,
                                     double *out_value);

/**
 * `M^-1 F` into `coeffs_out` (ridge-regularized when ill-conditioned;
 * `ridge_out`, if non-null, receives the ridge or 0).
 *
 * # Safety
 * `m` must hold `n*n` doubles, `f` and `coeffs_out` `n`; `ridge_out` may be null.
 */
enum HffStatus hff_mmse_coeffs(const double *m,
                               const double *f,
                               double sigma_cc,
                               size_t n,
                               double *coeffs_out,
                               double *ridge_out);

/**
 * Exact expected sample variance of the first `n_samples` locked samples.
 *
 * # Safety
 * Handles must be live, `controller` readable and `out_value` writable.
 */
enum HffStatus hff_expected_sample_variance(const struct HffSpectrum *spectrum,
                                            const struct HffSchedule *schedule,
                                            const struct HffController *controller_spec,
                                            size_t n_samples,
                                            double *out_value);

/**
 * Runs the command-line front end with `argc` arguments (the first being
 * the program name) and returns its exit code.
 *
 * # Safety
 * `argv` must hold `argc` valid NUL-terminated strings.
 */
int hff_cli_run(int argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HFFCLOCK_H */
