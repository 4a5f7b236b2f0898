//! C ABI over the `fbdsdej` solver.
//!
//! Every function returns an [`FbStatus`]; on failure a message is kept per
//! thread and read back with [`fbdsdej_last_error`]. Handles are opaque and
//! must be released with their `_free` function. Strings returned through
//! out-parameters are owned by the caller and released with
//! [`fbdsdej_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fbdsdej::config::{Backend, ProblemConfig, DEFAULT_SEED};
use fbdsdej::report::{run_checks, run_solve, RunResult, Status};
use fbdsdej::verification::{linear_bvp_oracle, LinearBvpSpec};
use fbdsdej::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbStatus {
    Ok = 0,
    IoOrParse = 1,
    Precondition = 2,
    Stalled = 3,
    CheckFailed = 4,
    NullPointer = 5,
    InvalidArgument = 6,
    Panic = 7,
}

/// Which mean trajectory to read from a solution.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbComponent {
    Forward = 0,
    Backward = 1,
}

/// A parsed problem configuration.
pub struct FbProblem {
    config: ProblemConfig,
    seed: Option<u64>,
    backend: Option<Backend>,
}

/// The outcome of one solve, including failed ones.
pub struct FbSolution {
    result: RunResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> FbStatus {
    match Status::of(err) {
        Status::Ok => FbStatus::Ok,
        Status::IoOrParse => FbStatus::IoOrParse,
        Status::Precondition => FbStatus::Precondition,
        Status::Stalled => FbStatus::Stalled,
        Status::CheckFailed => FbStatus::CheckFailed,
    }
}

fn fail(status: FbStatus, msg: &str) -> FbStatus {
    set_error(msg);
    status
}

fn from_error(err: Error) -> FbStatus {
    fail(status_of(&err), &err.to_string())
}

fn guard(body: impl FnOnce() -> FbStatus) -> FbStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(FbStatus::Panic, &format!("panic: {msg}"))
        }
    }
}

fn give_string(text: &str, out: *mut *mut c_char) -> FbStatus {
    match CString::new(text) {
        Ok(c) => {
            // SAFETY: callers check `out` for null before calling.
            unsafe { *out = c.into_raw() };
            FbStatus::Ok
        }
        Err(_) => fail(FbStatus::InvalidArgument, "string contains a NUL byte"),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fbdsdej_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty when none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fbdsdej_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parse a JSON problem configuration.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fbdsdej_problem_from_json(json: *const c_char, out: *mut *mut FbProblem) -> FbStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(FbStatus::NullPointer, "null argument");
        }
        let text = match CStr::from_ptr(json).to_str() {
            Ok(t) => t,
            Err(_) => return fail(FbStatus::InvalidArgument, "config is not UTF-8"),
        };
        match ProblemConfig::from_json(text).and_then(|c| c.coefficients().map(|_| c)) {
            Ok(config) => {
                *out = Box::into_raw(Box::new(FbProblem { config, seed: None, backend: None }));
                FbStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `problem` must come from [`fbdsdej_problem_from_json`] and not be freed
/// twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fbdsdej_problem_free(problem: *mut FbProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Override the seed of the configuration.
///
/// # Safety
/// `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fbdsdej_problem_set_seed(problem: *mut FbProblem, seed: u64) -> FbStatus {
    guard(|| match problem.as_mut() {
        Some(p) => {
            p.seed = Some(seed);
            FbStatus::Ok
        }
        None => fail(FbStatus::NullPointer, "null problem"),
    })
}

/// Select the backend: 0 for the scenario tree, 1 for Monte Carlo.
///
/// # Safety
/// `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fbdsdej_problem_set_backend(problem: *mut FbProblem, backend: u32) -> FbStatus {
    guard(|| {
        let Some(p) = problem.as_mut() else {
            return fail(FbStatus::NullPointer, "null problem");
        };
        p.backend = Some(match backend {
            0 => Backend::Tree,
            1 => Backend::Mc,
            _ => return fail(FbStatus::InvalidArgument, "backend must be 0 (tree) or 1 (mc)"),
        });
        FbStatus::Ok
    })
}

/// Solve by continuation. On `Ok`, `Precondition` and `Stalled` a solution
/// handle carrying the run document is written to `out`.
///
/// # Safety
/// `problem` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fbdsdej_solve(problem: *const FbProblem, out: *mut *mut FbSolution) -> FbStatus {
    guard(|| {
        let Some(p) = problem.as_ref() else {
            return fail(FbStatus::NullPointer, "null problem");
        };
        if out.is_null() {
            return fail(FbStatus::NullPointer, "null out");
        }
        let seed = p.seed.or(p.config.seed).unwrap_or(DEFAULT_SEED);
        let backend = p.backend.unwrap_or(p.config.backend);
        match run_solve(&p.config, seed, backend) {
            Ok((result, _)) => {
                let status = match result.status {
                    Status::Ok => FbStatus::Ok,
                    Status::Precondition => FbStatus::Precondition,
                    _ => FbStatus::Stalled,
                };
                if let Some(m) = &result.message {
                    set_error(m);
                }
                *out = Box::into_raw(Box::new(FbSolution { result }));
                status
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `solution` must come from [`fbdsdej_solve`] and not be freed twice; null
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn fbdsdej_solution_free(solution: *mut FbSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Number of time steps `N`; the mean trajectories have `N + 1` layers.
///
/// # Safety
/// `solution` must be a live handle and `steps` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fbdsdej_solution_steps(solution: *const FbSolution, steps: *mut usize) -> FbStatus {
    guard(|| {
        let (Some(s), false) = (solution.as_ref(), steps.is_null()) else {
            return fail(FbStatus::NullPointer, "null argument");
        };
        match &s.result.means {
            Some(m) => {
                *steps = m.y.len() - 1;
                FbStatus::Ok
            }
            None => fail(FbStatus::InvalidArgument, "the solve did not converge"),
        }
    })
}

/// Copy `E[y_i]` (`component` 0, see [`FbComponent`]) or `E[Y_i]` (1) on
/// `layer` into `out`, which must hold exactly the component's dimension.
///
/// # Safety
/// `solution` must be a live handle and `out` must point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn fbdsdej_solution_layer_mean(
    solution: *const FbSolution,
    component: u32,
    layer: usize,
    out: *mut f64,
    len: usize,
) -> FbStatus {
    guard(|| {
        let (Some(s), false) = (solution.as_ref(), out.is_null()) else {
            return fail(FbStatus::NullPointer, "null argument");
        };
        let Some(m) = &s.result.means else {
            return fail(FbStatus::InvalidArgument, "the solve did not converge");
        };
        let rows = match component {
            c if c == FbComponent::Forward as u32 => &m.y,
            c if c == FbComponent::Backward as u32 => &m.big_y,
            _ => return fail(FbStatus::InvalidArgument, "component must be 0 (forward) or 1 (backward)"),
        };
        let Some(v) = rows.get(layer) else {
            return fail(FbStatus::InvalidArgument, &format!("layer {layer} beyond {}", rows.len() - 1));
        };
        if v.len() != len {
            return fail(FbStatus::InvalidArgument, &format!("buffer holds {len} values, component has {}", v.len()));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), out, len);
        FbStatus::Ok
    })
}

/// Copy `E[y_0]` and `E[Y_0]`.
///
/// # Safety
/// `y0` and `big_y0` must point to `n` and `m` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fbdsdej_solution_initial(
    solution: *const FbSolution,
    y0: *mut f64,
    n: usize,
    big_y0: *mut f64,
    m: usize,
) -> FbStatus {
    let s = fbdsdej_solution_layer_mean(solution, FbComponent::Forward as u32, 0, y0, n);
    if s != FbStatus::Ok {
        return s;
    }
    fbdsdej_solution_layer_mean(solution, FbComponent::Backward as u32, 0, big_y0, m)
}

/// The run document as JSON.
///
/// # Safety
/// `solution` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fbdsdej_solution_report_json(solution: *const FbSolution, out: *mut *mut c_char) -> FbStatus {
    guard(|| {
        let (Some(s), false) = (solution.as_ref(), out.is_null()) else {
            return fail(FbStatus::NullPointer, "null argument");
        };
        give_string(&s.result.to_json(), out)
    })
}

/// Run the coefficient checkers; `CheckFailed` when any fails. The report is
/// written to `out` in both cases.
///
/// # Safety
/// `problem` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fbdsdej_check_json(problem: *const FbProblem, out: *mut *mut c_char) -> FbStatus {
    guard(|| {
        let (Some(p), false) = (problem.as_ref(), out.is_null()) else {
            return fail(FbStatus::NullPointer, "null argument");
        };
        let seed = p.seed.or(p.config.seed).unwrap_or(DEFAULT_SEED);
        match run_checks(&p.config, seed) {
            Ok(r) => {
                let s = give_string(&serde_json::to_string_pretty(&r).expect("report serializes"), out);
                match (s, r.pass) {
                    (FbStatus::Ok, false) => fail(FbStatus::CheckFailed, "a coefficient check failed"),
                    (s, _) => s,
                }
            }
            Err(e) => from_error(e),
        }
    })
}

/// Closed-form solution of the scalar linear two-point problem on a grid of
/// `steps` steps; `y` and `big_y` must hold `steps + 1` doubles each.
///
/// # Safety
/// `y` and `big_y` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fbdsdej_linear_bvp(
    theta1: f64,
    theta2: f64,
    beta1: f64,
    beta2: f64,
    psi0: f64,
    phi0: f64,
    horizon: f64,
    steps: usize,
    y: *mut f64,
    big_y: *mut f64,
    len: usize,
) -> FbStatus {
    guard(|| {
        if y.is_null() || big_y.is_null() {
            return fail(FbStatus::NullPointer, "null buffer");
        }
        if len != steps + 1 {
            return fail(FbStatus::InvalidArgument, &format!("buffers must hold steps + 1 = {} values", steps + 1));
        }
        let spec = LinearBvpSpec { theta1, theta2, beta1, beta2, psi0, phi0, horizon };
        match linear_bvp_oracle(&spec, steps) {
            Ok(t) => {
                ptr::copy_nonoverlapping(t.y.as_ptr(), y, len);
                ptr::copy_nonoverlapping(t.big_y.as_ptr(), big_y, len);
                FbStatus::Ok
            }
            Err(Error::SingularBoundary) => fail(FbStatus::Precondition, "singular boundary system"),
            Err(e) => fail(FbStatus::InvalidArgument, &e.to_string()),
        }
    })
}

/// Release a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fbdsdej_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
