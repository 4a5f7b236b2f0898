#ifndef FBDSDEJ_H
#define FBDSDEJ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Which mean trajectory to read from a solution.
typedef enum FbComponent {
  FB_COMPONENT_FORWARD = 0,
  FB_COMPONENT_BACKWARD = 1,
} FbComponent;

typedef enum FbStatus {
  FB_STATUS_OK = 0,
  FB_STATUS_IO_OR_PARSE = 1,
  FB_STATUS_PRECONDITION = 2,
  FB_STATUS_STALLED = 3,
  FB_STATUS_CHECK_FAILED = 4,
  FB_STATUS_NULL_POINTER = 5,
  FB_STATUS_INVALID_ARGUMENT = 6,
  FB_STATUS_PANIC = 7,
} FbStatus;

// A parsed problem configuration.
typedef struct FbProblem FbProblem;

// The outcome of one solve, including failed ones.
typedef struct FbSolution FbSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *fbdsdej_version(void);

// Message of the last failed call on this thread; empty when none. Valid
// until the next failing call on the same thread.
const char *fbdsdej_last_error(void);

// Parse a JSON problem configuration.
//
// # Safety
// `json` must be a valid NUL-terminated string and `out` a valid pointer.
enum FbStatus fbdsdej_problem_from_json(const char *json, struct FbProblem **out);

// # Safety
// `problem` must come from [`fbdsdej_problem_from_json`] and not be freed
// twice; null is ignored.
void fbdsdej_problem_free(struct FbProblem *problem);

// Override the seed of the configuration.
//
// # Safety
// `problem` must be a live handle.
enum FbStatus fbdsdej_problem_set_seed(struct FbProblem *problem, uint64_t seed);

// Select the backend: 0 for the scenario tree, 1 for Monte Carlo.
//
// # Safety
// `problem` must be a live handle.
enum FbStatus fbdsdej_problem_set_backend(struct FbProblem *problem, uint32_t backend);

// Solve by continuation. On `Ok`, `Precondition` and `Stalled` a solution
// handle carrying the run document is written to `out`.
//
// # Safety
// `problem` must be a live handle and `out` a valid pointer.
enum FbStatus fbdsdej_solve(const struct FbProblem *problem, struct FbSolution **out);

// # Safety
// `solution` must come from [`fbdsdej_solve`] and not be freed twice; null
// is ignored.
void fbdsdej_solution_free(struct FbSolution *solution);

// Number of time steps `N`; the mean trajectories have `N + 1` layers.
//
// # Safety
// `solution` must be a live handle and `steps` a valid pointer.
enum FbStatus fbdsdej_solution_steps(const struct FbSolution *solution, size_t *steps);

// Copy `E[y_i]` (`component` 0, see [`FbComponent`]) or `E[Y_i]` (1) on
// `layer` into `out`, which must hold exactly the component's dimension.
//
// # Safety
// `solution` must be a live handle and `out` must point to `len` writable
// doubles.
enum FbStatus fbdsdej_solution_layer_mean(const struct FbSolution *solution,
                                          uint32_t component,
                                          size_t layer,
                                          double *out,
                                          size_t len);

// Copy `E[y_0]` and `E[Y_0]`.
//
// # Safety
// `y0` and `big_y0` must point to `n` and `m` writable doubles.
enum FbStatus fbdsdej_solution_initial(const struct FbSolution *solution,
                                       double *y0,
                                       size_t n,
                                       double *big_y0,
                                       size_t m);

// The run document as JSON.
//
// # Safety
// `solution` must be a live handle and `out` a valid pointer.
enum FbStatus fbdsdej_solution_report_json(const struct FbSolution *solution, char **out);

// Run the coefficient checkers; `CheckFailed` when any fails. The report is
// written to `out` in both cases.
//
// # Safety
// `problem` must be a live handle and `out` a valid pointer.
enum FbStatus fbdsdej_check_json(const struct FbProblem *problem, char **out);

// Closed-form solution of the scalar linear two-point problem on a grid of
// `steps` steps; `y` and `big_y` must hold `steps + 1` doubles each.
//
// # Safety
// `y` and `big_y` must point to `len` writable doubles.
enum FbStatus fbdsdej_linear_bvp(double theta1,
                                 double theta2,
                                 double beta1,
                                 double beta2,
                                 double psi0,
                                 double phi0,
                                 double horizon,
                                 size_t steps,
                                 double *y,
                                 double *big_y,
                                 size_t len);

// Release a string returned by this library; null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void fbdsdej_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FBDSDEJ_H */
