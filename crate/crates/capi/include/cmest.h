/* C interface for the constrained convex estimation library.
 *
 * Conventions:
 *   - fallible calls return a cmest_status and write results through
 *     out-pointers;
 *   - handles come from *_new / *_from_json and are released with the
 *     matching *_free (freeing NULL is a no-op);
 *   - the most recent error message is thread-local; fetch it with
 *     cmest_last_error.
 *
 * Kept in lockstep with crates/capi/src/lib.rs (see the `abi` test).
 */

#ifndef CMEST_H
#define CMEST_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cmest_status {
  CMEST_OK = 0,
  CMEST_ERR_INVALID = 1,     /* bad argument, dimension mismatch, parse error */
  CMEST_ERR_NUMERIC = 2,     /* iteration cap, degenerate curvature */
  CMEST_ERR_INFEASIBLE = 3,  /* empty constraint set */
  CMEST_ERR_UNSUPPORTED = 4, /* (set, point) outside the dispatch table */
  CMEST_ERR_RESOURCE = 5,    /* enumeration over the hard cap */
  CMEST_ERR_PANIC = 6        /* internal panic caught at the boundary */
} cmest_status;

/* Opaque handles. */
typedef struct CmestSet CmestSet;
typedef struct CmestMetric CmestMetric;

/* Library version, NUL-terminated static string. */
const char *cmest_version(void);

/* Copy the last error message into buf (truncating, always NUL-terminated
 * when len > 0). Returns the untruncated message length. */
size_t cmest_last_error(char *buf, size_t len);

/* Constraint sets, parsed from the JSON wire format:
 *   {"type": "full", "dim": 2}
 *   {"type": "ball", "center": [...], "radius": r}
 *   {"type": "box", "lo": [...], "hi": [...]}
 *   {"type": "polyhedron", "a": [[...]], "b": [...]}   (A x <= b)
 *   {"type": "cone", "a": [[...]]}                     (A x <= 0)
 */
cmest_status cmest_set_from_json(const char *json, CmestSet **out);
void cmest_set_free(CmestSet *set);
size_t cmest_set_dim(const CmestSet *set);

/* Metrics (SPD scalar products <x,y>_S = x' S y). */
cmest_status cmest_metric_identity(size_t dim, CmestMetric **out);
cmest_status cmest_metric_new(size_t dim, const double *s_row_major,
                              CmestMetric **out);
void cmest_metric_free(CmestMetric *metric);

/* Membership within Euclidean slack tol; writes 0/1 into *out. */
cmest_status cmest_set_contains(const CmestSet *set, const double *x,
                                size_t len, double tol, int *out);

/* Metric projection of x onto the set; writes len doubles into out. */
cmest_status cmest_project(const CmestSet *set, const CmestMetric *metric,
                           const double *x, size_t len, double tol,
                           double *out);

/* Directional derivative of the metric projection at x in direction z.
 * eps > 0 selects the finite-difference quotient at that step instead of
 * the closed dispatch. Writes len doubles into out. */
cmest_status cmest_dproj(const CmestSet *set, const CmestMetric *metric,
                         const double *x, const double *z, size_t len,
                         double eps, double *out);

/* Projected-subgradient minimization of an empirical convex risk with
 * default solver settings. loss_json is e.g. {"loss": "squared"} or
 * {"loss": "huber", "c": 1.0}; data is row-major n x datum_dim. Writes the
 * estimate into theta_out (parameter dimension implied by the loss: equal to
 * datum_dim for location losses, datum_dim - 1 for the regression loss);
 * risk_out / certificate_out may be NULL. Returns CMEST_ERR_NUMERIC when the
 * iteration cap is reached without an optimality certificate. */
cmest_status cmest_minimize(const char *loss_json, const double *data,
                            size_t n, size_t datum_dim, const CmestSet *set,
                            const CmestMetric *metric, double *theta_out,
                            double *risk_out, double *certificate_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* CMEST_H */
