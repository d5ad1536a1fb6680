#ifndef REGULATE_H
#define REGULATE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum RegEstimand {
  REG_ESTIMAND_ATE = 0,
  REG_ESTIMAND_ATT = 1,
  REG_ESTIMAND_ATU = 2,
} RegEstimand;

typedef enum RegSeKind {
  REG_SE_KIND_HOMOSKEDASTIC = 0,
  REG_SE_KIND_ROBUST = 1,
  REG_SE_KIND_CLUSTER = 2,
} RegSeKind;

typedef enum RegStatus {
  REG_STATUS_OK = 0,
  REG_STATUS_NULL_POINTER = 1,
  REG_STATUS_CONFIG = 2,
  REG_STATUS_DATA = 3,
  REG_STATUS_NUMERICAL = 4,
  REG_STATUS_PANIC = 5,
} RegStatus;

typedef struct RegDataset RegDataset;

typedef struct RegDesign RegDesign;

typedef struct RegReport RegReport;

/**
 * Inputs to [`reg_estimate`].
 */
typedef struct RegOptions {
  /**
   * Bound on the standard deviation of conditional effects.
   */
  double c;
  double alpha;
  enum RegSeKind se_kind;
} RegOptions;

/**
 * Scalar summary of an estimate. `lambda_star` is `INFINITY` for the
 * short regression.
 */
typedef struct RegSummary {
  size_t n;
  double beta_hat;
  double ci_lo;
  double ci_hi;
  double half_length;
  double maxbias;
  double sd;
  double lambda_star;
  double sigma_hat;
  double lindeberg;
  size_t warnings;
} RegSummary;

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *reg_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *reg_version(void);

/**
 * Critical value `cv_alpha(b)`: the `1 − alpha` quantile of `|N(b, 1)|`.
 *
 * # Safety
 * `out` must point to writable memory for one `double`.
 */
enum RegStatus reg_cv(double b, double alpha, double *out);

/**
 * Builds a dataset from `n` outcomes, treatments and an `n × p` covariate
 * matrix stored column-major. `names` may be NULL, in which case the
 * covariates are named `x0`, `x1`, ...
 *
 * # Safety
 * `y` and `d` must point to `n` doubles, `x` to `n * p` doubles, `names` to
 * `p` NUL-terminated strings when non-NULL, and `out` to a writable handle.
 */
enum RegStatus reg_dataset_new(const double *y,
                               const double *d,
                               const double *x,
                               size_t n,
                               size_t p,
                               const char *const *names,
                               struct RegDataset **out);

/**
 * Attaches cluster identifiers used by cluster-robust standard errors.
 *
 * # Safety
 * `ds` must be a live dataset handle and `ids` must point to `n` values.
 */
enum RegStatus reg_dataset_set_clusters(struct RegDataset *ds, const int64_t *ids, size_t n);

/**
 * Replaces the listed covariate columns, treated as discrete, by the
 * indicators of their joint cells. The input handle is left unchanged.
 *
 * # Safety
 * `ds` must be a live dataset handle, `columns` must point to `ncols`
 * indices and `out` to a writable handle.
 */
enum RegStatus reg_dataset_saturate(const struct RegDataset *ds,
                                    const size_t *columns,
                                    size_t ncols,
                                    struct RegDataset **out);

/**
 * Number of rows, or 0 for a NULL handle.
 *
 * # Safety
 * `ds` must be NULL or a live dataset handle.
 */
size_t reg_dataset_n(const struct RegDataset *ds);

/**
 * Number of covariate columns, or 0 for a NULL handle.
 *
 * # Safety
 * `ds` must be NULL or a live dataset handle.
 */
size_t reg_dataset_p(const struct RegDataset *ds);

/**
 * # Safety
 * `ds` must be NULL or a handle not yet freed.
 */
void reg_dataset_free(struct RegDataset *ds);

/**
 * Builds the design matrices for `estimand`. The design keeps its own copy
 * of the outcome, so the dataset may be freed afterwards.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` a writable handle.
 */
enum RegStatus reg_design_build(const struct RegDataset *ds,
                                enum RegEstimand estimand,
                                struct RegDesign **out);

/**
 * Number of interaction columns `k`, or 0 for a NULL handle.
 *
 * # Safety
 * `design` must be NULL or a live design handle.
 */
size_t reg_design_k(const struct RegDesign *design);

/**
 * # Safety
 * `design` must be NULL or a handle not yet freed.
 */
void reg_design_free(struct RegDesign *design);

/**
 * Worst-case bias of the linear estimator `Σ aᵢYᵢ` over effects whose
 * standard deviation is at most `c`.
 *
 * # Safety
 * `design` must be a live design handle, `weights` must point to `n`
 * doubles and `out` to one writable double.
 */
enum RegStatus reg_maxbias(const struct RegDesign *design,
                           const double *weights,
                           size_t n,
                           double c,
                           double *out);

/**
 * Point estimate and bias-aware confidence interval.
 *
 * # Safety
 * `design` must be a live design handle, `opts` must point to a valid
 * options struct and `out` to a writable handle.
 */
enum RegStatus reg_estimate(const struct RegDesign *design,
                            const struct RegOptions *opts,
                            struct RegReport **out);

/**
 * # Safety
 * `report` must be a live report handle and `out` writable.
 */
enum RegStatus reg_report_summary(const struct RegReport *report, struct RegSummary *out);

/**
 * Copies the estimator weights into `buf`, which must hold `len >= n`
 * doubles.
 *
 * # Safety
 * `report` must be a live report handle and `buf` must point to `len`
 * writable doubles.
 */
enum RegStatus reg_report_weights(const struct RegReport *report, double *buf, size_t len);

/**
 * # Safety
 * `report` must be NULL or a handle not yet freed.
 */
void reg_report_free(struct RegReport *report);

#endif  /* REGULATE_H */
