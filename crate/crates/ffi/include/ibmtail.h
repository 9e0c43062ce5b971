#ifndef IBMTAIL_H
#define IBMTAIL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IbmtailStatus {
  IBMTAIL_STATUS_OK = 0,
  IBMTAIL_STATUS_NULL_POINTER = 1,
  /**
   * Argument outside the routine's domain.
   */
  IBMTAIL_STATUS_DOMAIN = 2,
  /**
   * Factorization, eigensolver, convergence or fit failure.
   */
  IBMTAIL_STATUS_NUMERIC = 3,
  IBMTAIL_STATUS_IO = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  IBMTAIL_STATUS_PANIC = 5,
} IbmtailStatus;

typedef enum IbmtailNorm {
  IBMTAIL_NORM_SUP = 0,
  IBMTAIL_NORM_LP = 1,
} IbmtailNorm;

typedef enum IbmtailDrift {
  IBMTAIL_DRIFT_NONE = 0,
  IBMTAIL_DRIFT_ENDPOINT = 1,
  /**
   * Top eigenfunction; L² norm only.
   */
  IBMTAIL_DRIFT_TOP_EIGENFUNCTION = 2,
} IbmtailDrift;

/**
 * Covariance spectrum of X_m.
 */
typedef struct IbmtailSpectrum IbmtailSpectrum;

typedef struct IbmtailTailEstimate {
  double estimate;
  /**
   * Standard error of the estimate.
   */
  double std_error;
  double ci_low;
  double ci_high;
  uint64_t n_samples;
  double effective_sample_size;
  bool ess_warning;
} IbmtailTailEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ibmtail_version(void);

/**
 * Copies the message of the last failed call on this thread into `buf`
 * (truncated, always NUL-terminated when `len > 0`). Returns the full message
 * length in bytes, 0 when the last call succeeded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ibmtail_last_error(char *buf, size_t len);

/**
 * K_m(s,t) = Cov(X_m(s), X_m(t)).
 *
 * # Safety
 * `out` must be null or valid for a write.
 */
enum IbmtailStatus ibmtail_kernel(uint32_t m, double s, double t, double *out);

/**
 * Sharp asymptotic of P{sup |X_m| > r}.
 *
 * # Safety
 * `out` must be null or valid for a write.
 */
enum IbmtailStatus ibmtail_asymptotic_tail_sup(uint32_t m, double r, double *out);

/**
 * Exact P{sup_{[0,1]} |W| > r} for Brownian motion.
 *
 * # Safety
 * `out` must be null or valid for a write.
 */
enum IbmtailStatus ibmtail_reflection_tail_bm(double r, double *out);

/**
 * Computes the Nyström spectrum of X_m on `nodes` Gauss–Legendre nodes.
 * The handle written to `out` must be released with [`ibmtail_spectrum_free`].
 *
 * # Safety
 * `out` must be null or valid for a write.
 */
enum IbmtailStatus ibmtail_spectrum_new(uint32_t m,
                                        size_t nodes,
                                        bool richardson,
                                        struct IbmtailSpectrum **out);

/**
 * Releases a spectrum handle; null is ignored.
 *
 * # Safety
 * `h` must be null or a handle from [`ibmtail_spectrum_new`] not yet freed.
 */
void ibmtail_spectrum_free(struct IbmtailSpectrum *h);

/**
 * Number of eigenvalues held.
 *
 * # Safety
 * `h` must be a live handle; `out` must be null or valid for a write.
 */
enum IbmtailStatus ibmtail_spectrum_len(const struct IbmtailSpectrum *h, size_t *out);

/**
 * Copies up to `len` leading eigenvalues (extrapolated where available) into
 * `buf` and the count copied into `written`.
 *
 * # Safety
 * `h` must be a live handle; `buf` must point to `len` writable doubles.
 */
enum IbmtailStatus ibmtail_spectrum_eigenvalues(const struct IbmtailSpectrum *h,
                                                double *buf,
                                                size_t len,
                                                size_t *written);

/**
 * Constants c̄ and c(λ) of the sharp L² tail.
 *
 * # Safety
 * `h` must be a live handle; the out-pointers must be null or valid for writes.
 */
enum IbmtailStatus ibmtail_spectrum_zolotarev(const struct IbmtailSpectrum *h,
                                              double *c_bar,
                                              double *c_lambda);

/**
 * Sharp asymptotic of P{‖X_m‖_{L²} > r} from the spectrum.
 *
 * # Safety
 * `h` must be a live handle; `out` must be null or valid for a write.
 */
enum IbmtailStatus ibmtail_spectrum_asymptotic_tail_l2(const struct IbmtailSpectrum *h,
                                                       double r,
                                                       double *out);

/**
 * Monte Carlo estimate of P{‖X_m‖ > r} with default sampling settings.
 * `p` is read only for the L^p norm; a NaN `shift` means shift = r. The
 * random stream matches `ibmtail tail` with the same seed and r.
 *
 * # Safety
 * `out` must be null or valid for a write.
 */
enum IbmtailStatus ibmtail_mc_tail(uint32_t m,
                                   enum IbmtailNorm norm,
                                   double p,
                                   double r,
                                   uint64_t n,
                                   uint64_t seed,
                                   enum IbmtailDrift drift,
                                   double shift,
                                   struct IbmtailTailEstimate *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IBMTAIL_H */
