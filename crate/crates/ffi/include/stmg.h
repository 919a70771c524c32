#ifndef STMG_H
#define STMG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define STMG_EQUATION_HEAT 0

#define STMG_EQUATION_WAVE 1

#define STMG_SCHEME_DG 0

#define STMG_SCHEME_CGP 1

typedef enum StmgStatus {
  STMG_STATUS_OK = 0,
  STMG_STATUS_NULL_POINTER = 1,
  STMG_STATUS_INVALID_ARGUMENT = 2,
  STMG_STATUS_DIMENSION_MISMATCH = 3,
  STMG_STATUS_SIZE_LIMIT = 4,
  STMG_STATUS_PERTURBATION_FAILURE = 5,
  STMG_STATUS_NUMERIC_FAILURE = 6,
  STMG_STATUS_NOT_CONVERGED = 7,
  /**
   * A result the report does not carry, e.g. errors without an exact solution.
   */
  STMG_STATUS_UNAVAILABLE = 8,
  STMG_STATUS_BUFFER_TOO_SMALL = 9,
  STMG_STATUS_PANIC = 10,
} StmgStatus;

/**
 * Opaque problem description.
 */
typedef struct StmgProblem StmgProblem;

/**
 * Opaque result of a solve.
 */
typedef struct StmgReport StmgReport;

/**
 * Error norms of one run.
 */
typedef struct StmgErrors {
  double linf_linf;
  double l2_l2;
  double linf_l2;
} StmgErrors;

/**
 * Wall time per program section in seconds.
 */
typedef struct StmgSections {
  double gmg_without_smoother;
  double smoother;
  double operator_without_gmg;
  double other;
  double total;
  double dofs_per_second;
} StmgSections;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *stmg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *stmg_version(void);

/**
 * Manufactured problem `u = sin(2πft) Π sin(2πf x_a)` on the unit cube.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum StmgStatus stmg_problem_manufactured(uint32_t equation_code,
                                          uint32_t scheme_code,
                                          size_t k,
                                          size_t p,
                                          size_t dim,
                                          size_t refinements,
                                          double frequency,
                                          struct StmgProblem **out);

/**
 * Layered-coefficient 3D wave problem with an initial pulse of radius `s`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum StmgStatus stmg_problem_shm(uint32_t scheme_code,
                                 size_t k,
                                 size_t p,
                                 size_t refinements,
                                 double s,
                                 struct StmgProblem **out);

/**
 * Number of time steps solved together; must divide the step count.
 *
 * # Safety
 * `problem` must be a live handle or null.
 */
enum StmgStatus stmg_problem_set_batch(struct StmgProblem *problem, size_t batch);

/**
 * GMRES stopping rule `‖r‖ ≤ max(abs_tol, rel_tol ‖r₀‖)` and iteration cap.
 *
 * # Safety
 * `problem` must be a live handle or null.
 */
enum StmgStatus stmg_problem_set_tolerances(struct StmgProblem *problem,
                                            double abs_tol,
                                            double rel_tol,
                                            size_t max_iter);

/**
 * Pre- and post-smoothing steps of the V-cycle.
 *
 * # Safety
 * `problem` must be a live handle or null.
 */
enum StmgStatus stmg_problem_set_smoothing(struct StmgProblem *problem, size_t n_smooth);

/**
 * Random vertex shift of the given magnitude; 0 restores the Cartesian grid.
 *
 * # Safety
 * `problem` must be a live handle or null.
 */
enum StmgStatus stmg_problem_set_perturbation(struct StmgProblem *problem,
                                              double magnitude,
                                              uint64_t seed);

/**
 * Probe points as `n_points` consecutive coordinate tuples of the problem dimension.
 *
 * # Safety
 * `problem` must be a live handle or null; `coords` must point to
 * `n_points · dim` readable values when `n_points > 0`.
 */
enum StmgStatus stmg_problem_set_probes(struct StmgProblem *problem,
                                        const double *coords,
                                        size_t n_points);

/**
 * # Safety
 * `problem` must be a handle from this library that was not freed yet, or null.
 */
void stmg_problem_free(struct StmgProblem *problem);

/**
 * Solve the problem. On success `*out` receives a report handle.
 *
 * # Safety
 * `problem` must be a live handle or null; `out` writable or null.
 */
enum StmgStatus stmg_solve(const struct StmgProblem *problem, struct StmgReport **out);

/**
 * # Safety
 * `report` must be a handle from this library that was not freed yet, or null.
 */
void stmg_report_free(struct StmgReport *report);

/**
 * Displacement errors (`velocity = false`) or, for the wave equation, velocity errors.
 *
 * # Safety
 * `report` must be a live handle or null; `out` writable or null.
 */
enum StmgStatus stmg_report_errors(const struct StmgReport *report,
                                   bool velocity,
                                   struct StmgErrors *out);

/**
 * # Safety
 * `report` must be a live handle or null; `out` writable or null.
 */
enum StmgStatus stmg_report_sections(const struct StmgReport *report, struct StmgSections *out);

/**
 * Mean GMRES iterations per batch, space-time unknowns and work metric.
 *
 * # Safety
 * `report` must be a live handle or null; the outputs writable or null.
 */
enum StmgStatus stmg_report_summary(const struct StmgReport *report,
                                    double *mean_iterations,
                                    size_t *total_dofs,
                                    double *work);

/**
 * Copy the iteration count of every batch into `buf`. `*len` holds the
 * capacity on entry and the number of batches on return; with a too small
 * buffer nothing is copied and [`StmgStatus::BufferTooSmall`] is returned.
 *
 * # Safety
 * `report` must be a live handle or null; `len` writable; `buf` must hold
 * `*len` values or be null when `*len` is 0.
 */
enum StmgStatus stmg_report_iterations(const struct StmgReport *report, size_t *buf, size_t *len);

/**
 * Signal of probe `probe` at the times of [`stmg_report_probe_times`].
 * Same buffer protocol as [`stmg_report_iterations`].
 *
 * # Safety
 * As for [`stmg_report_iterations`].
 */
enum StmgStatus stmg_report_probe_values(const struct StmgReport *report,
                                         size_t probe,
                                         double *buf,
                                         size_t *len);

/**
 * Sample times of the probe signals. Same buffer protocol as
 * [`stmg_report_iterations`].
 *
 * # Safety
 * As for [`stmg_report_iterations`].
 */
enum StmgStatus stmg_report_probe_times(const struct StmgReport *report, double *buf, size_t *len);

/**
 * The whole report as JSON. Release the string with [`stmg_string_free`].
 *
 * # Safety
 * `report` must be a live handle or null; `out` writable or null.
 */
enum StmgStatus stmg_report_to_json(const struct StmgReport *report, char **out);

/**
 * # Safety
 * `s` must come from [`stmg_report_to_json`] and not be freed yet, or be null.
 */
void stmg_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STMG_H */
