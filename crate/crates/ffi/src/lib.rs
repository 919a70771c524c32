//! C interface to the space-time solver.
//!
//! Problems and reports are opaque handles created and destroyed through this
//! interface. Every fallible call returns an [`StmgStatus`]; on failure a
//! message is available from [`stmg_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use stmg_core::driver::{manufactured, march, shm_spec, ErrorRecord, Perturbation, ProblemSpec, RunReport};
use stmg_core::st_operator::Equation;
use stmg_core::time_basis::TimeScheme;
use stmg_core::StmgError;

pub const STMG_EQUATION_HEAT: u32 = 0;
pub const STMG_EQUATION_WAVE: u32 = 1;
pub const STMG_SCHEME_DG: u32 = 0;
pub const STMG_SCHEME_CGP: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StmgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    SizeLimit = 4,
    PerturbationFailure = 5,
    NumericFailure = 6,
    NotConverged = 7,
    /// A result the report does not carry, e.g. errors without an exact solution.
    Unavailable = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Error norms of one run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct StmgErrors {
    pub linf_linf: f64,
    pub l2_l2: f64,
    pub linf_l2: f64,
}

/// Wall time per program section in seconds.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct StmgSections {
    pub gmg_without_smoother: f64,
    pub smoother: f64,
    pub operator_without_gmg: f64,
    pub other: f64,
    pub total: f64,
    pub dofs_per_second: f64,
}

/// Opaque problem description.
pub struct StmgProblem(ProblemSpec);

/// Opaque result of a solve.
pub struct StmgReport(RunReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: StmgStatus, msg: impl Into<String>) -> StmgStatus {
    set_error(msg);
    status
}

fn from_core(e: StmgError) -> StmgStatus {
    let status = match e {
        StmgError::InvalidArgument(_) => StmgStatus::InvalidArgument,
        StmgError::DimensionMismatch { .. } => StmgStatus::DimensionMismatch,
        StmgError::SizeLimit(_) => StmgStatus::SizeLimit,
        StmgError::PerturbationFailure { .. } => StmgStatus::PerturbationFailure,
        StmgError::NumericFailure(_) => StmgStatus::NumericFailure,
        StmgError::NotConverged(_) => StmgStatus::NotConverged,
    };
    fail(status, e.to_string())
}

/// Run `f`, turning panics into [`StmgStatus::Panic`].
fn guard(f: impl FnOnce() -> StmgStatus) -> StmgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(StmgStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

fn equation(code: u32) -> Option<Equation> {
    match code {
        STMG_EQUATION_HEAT => Some(Equation::Heat),
        STMG_EQUATION_WAVE => Some(Equation::Wave),
        _ => None,
    }
}

fn scheme(code: u32) -> Option<TimeScheme> {
    match code {
        STMG_SCHEME_DG => Some(TimeScheme::DG),
        STMG_SCHEME_CGP => Some(TimeScheme::CGP),
        _ => None,
    }
}

fn emit_problem(spec: ProblemSpec, out: *mut *mut StmgProblem) -> StmgStatus {
    if let Err(e) = spec.validate() {
        return from_core(e);
    }
    // SAFETY: checked non-null by the callers.
    unsafe { *out = Box::into_raw(Box::new(StmgProblem(spec))) };
    StmgStatus::Ok
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn stmg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stmg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Manufactured problem `u = sin(2πft) Π sin(2πf x_a)` on the unit cube.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn stmg_problem_manufactured(
    equation_code: u32,
    scheme_code: u32,
    k: usize,
    p: usize,
    dim: usize,
    refinements: usize,
    frequency: f64,
    out: *mut *mut StmgProblem,
) -> StmgStatus {
    guard(|| {
        if out.is_null() {
            return fail(StmgStatus::NullPointer, "output handle pointer is null");
        }
        let (Some(eq), Some(sc)) = (equation(equation_code), scheme(scheme_code)) else {
            return fail(StmgStatus::InvalidArgument, "unknown equation or scheme code");
        };
        emit_problem(manufactured(eq, sc, k, p, dim, refinements, frequency), out)
    })
}

/// Layered-coefficient 3D wave problem with an initial pulse of radius `s`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn stmg_problem_shm(
    scheme_code: u32,
    k: usize,
    p: usize,
    refinements: usize,
    s: f64,
    out: *mut *mut StmgProblem,
) -> StmgStatus {
    guard(|| {
        if out.is_null() {
            return fail(StmgStatus::NullPointer, "output handle pointer is null");
        }
        let Some(sc) = scheme(scheme_code) else {
            return fail(StmgStatus::InvalidArgument, "unknown scheme code");
        };
        if !(s > 0.0) {
            return fail(StmgStatus::InvalidArgument, "pulse radius must be positive");
        }
        emit_problem(shm_spec(sc, k, p, refinements, s), out)
    })
}

/// Apply `edit` to the problem behind `problem` and re-validate.
unsafe fn edit(problem: *mut StmgProblem, edit: impl FnOnce(&mut ProblemSpec)) -> StmgStatus {
    guard(|| {
        // SAFETY: the caller passes a live handle or null.
        let Some(p) = (unsafe { problem.as_mut() }) else {
            return fail(StmgStatus::NullPointer, "problem handle is null");
        };
        let mut spec = p.0.clone();
        edit(&mut spec);
        match spec.validate() {
            Ok(()) => {
                p.0 = spec;
                StmgStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Number of time steps solved together; must divide the step count.
///
/// # Safety
/// `problem` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn stmg_problem_set_batch(problem: *mut StmgProblem, batch: usize) -> StmgStatus {
    edit(problem, |s| s.batch = batch)
}

/// GMRES stopping rule `‖r‖ ≤ max(abs_tol, rel_tol ‖r₀‖)` and iteration cap.
///
/// # Safety
/// `problem` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn stmg_problem_set_tolerances(
    problem: *mut StmgProblem,
    abs_tol: f64,
    rel_tol: f64,
    max_iter: usize,
) -> StmgStatus {
    if !(abs_tol >= 0.0 && rel_tol >= 0.0) || max_iter == 0 {
        return fail(StmgStatus::InvalidArgument, "tolerances must be non-negative and max_iter positive");
    }
    edit(problem, |s| {
        s.gmres.abs_tol = abs_tol;
        s.gmres.rel_tol = rel_tol;
        s.gmres.max_iter = max_iter;
    })
}

/// Pre- and post-smoothing steps of the V-cycle.
///
/// # Safety
/// `problem` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn stmg_problem_set_smoothing(problem: *mut StmgProblem, n_smooth: usize) -> StmgStatus {
    if n_smooth == 0 {
        return fail(StmgStatus::InvalidArgument, "at least one smoothing step is required");
    }
    edit(problem, |s| s.multigrid.n_smooth = n_smooth)
}

/// Random vertex shift of the given magnitude; 0 restores the Cartesian grid.
///
/// # Safety
/// `problem` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn stmg_problem_set_perturbation(problem: *mut StmgProblem, magnitude: f64, seed: u64) -> StmgStatus {
    if !(0.0..0.5).contains(&magnitude) {
        return fail(StmgStatus::InvalidArgument, "perturbation magnitude must lie in [0, 0.5)");
    }
    edit(problem, |s| s.perturbation = (magnitude > 0.0).then_some(Perturbation { magnitude, seed }))
}

/// Probe points as `n_points` consecutive coordinate tuples of the problem dimension.
///
/// # Safety
/// `problem` must be a live handle or null; `coords` must point to
/// `n_points · dim` readable values when `n_points > 0`.
#[no_mangle]
pub unsafe extern "C" fn stmg_problem_set_probes(problem: *mut StmgProblem, coords: *const f64, n_points: usize) -> StmgStatus {
    // SAFETY: the caller passes a live handle or null.
    let Some(dim) = (unsafe { problem.as_ref() }).map(|p| p.0.dim) else {
        return fail(StmgStatus::NullPointer, "problem handle is null");
    };
    if n_points > 0 && coords.is_null() {
        return fail(StmgStatus::NullPointer, "probe coordinates are null");
    }
    let flat: &[f64] = if n_points == 0 {
        &[]
    } else {
        // SAFETY: the caller guarantees `n_points · dim` readable values.
        unsafe { std::slice::from_raw_parts(coords, n_points * dim) }
    };
    let points: Vec<Vec<f64>> = flat.chunks(dim).map(<[f64]>::to_vec).collect();
    edit(problem, |s| s.probes = points)
}

/// # Safety
/// `problem` must be a handle from this library that was not freed yet, or null.
#[no_mangle]
pub unsafe extern "C" fn stmg_problem_free(problem: *mut StmgProblem) {
    if !problem.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(problem) });
    }
}

/// Solve the problem. On success `*out` receives a report handle.
///
/// # Safety
/// `problem` must be a live handle or null; `out` writable or null.
#[no_mangle]
pub unsafe extern "C" fn stmg_solve(problem: *const StmgProblem, out: *mut *mut StmgReport) -> StmgStatus {
    guard(|| {
        // SAFETY: the caller passes a live handle or null.
        let Some(p) = (unsafe { problem.as_ref() }) else {
            return fail(StmgStatus::NullPointer, "problem handle is null");
        };
        if out.is_null() {
            return fail(StmgStatus::NullPointer, "output handle pointer is null");
        }
        match march(&p.0) {
            Ok(rep) => {
                // SAFETY: checked non-null above.
                unsafe { *out = Box::into_raw(Box::new(StmgReport(rep))) };
                StmgStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `report` must be a handle from this library that was not freed yet, or null.
#[no_mangle]
pub unsafe extern "C" fn stmg_report_free(report: *mut StmgReport) {
    if !report.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(report) });
    }
}

unsafe fn with_report(report: *const StmgReport, f: impl FnOnce(&RunReport) -> StmgStatus) -> StmgStatus {
    guard(|| {
        // SAFETY: the caller passes a live handle or null.
        match unsafe { report.as_ref() } {
            Some(r) => f(&r.0),
            None => fail(StmgStatus::NullPointer, "report handle is null"),
        }
    })
}

unsafe fn write_out<T>(out: *mut T, value: T) -> StmgStatus {
    if out.is_null() {
        return fail(StmgStatus::NullPointer, "output pointer is null");
    }
    // SAFETY: checked non-null; the caller guarantees it is writable.
    unsafe { out.write(value) };
    StmgStatus::Ok
}

fn errors(e: Option<ErrorRecord>) -> Option<StmgErrors> {
    e.map(|e| StmgErrors {
        linf_linf: e.linf_linf,
        l2_l2: e.l2_l2,
        linf_l2: e.linf_l2,
    })
}

/// Displacement errors (`velocity = false`) or, for the wave equation, velocity errors.
///
/// # Safety
/// `report` must be a live handle or null; `out` writable or null.
#[no_mangle]
pub unsafe extern "C" fn stmg_report_errors(report: *const StmgReport, velocity: bool, out: *mut StmgErrors) -> StmgStatus {
    with_report(report, |r| {
        match errors(if velocity { r.errors_v } else { r.errors_u }) {
            // SAFETY: forwarded caller contract.
            Some(e) => unsafe { write_out(out, e) },
            None => fail(StmgStatus::Unavailable, "the run has no exact solution for this field"),
        }
    })
}

/// # Safety
/// `report` must be a live handle or null; `out` writable or null.
#[no_mangle]
pub unsafe extern "C" fn stmg_report_sections(report: *const StmgReport, out: *mut StmgSections) -> StmgStatus {
    with_report(report, |r| {
        let s = r.sections;
        let v = StmgSections {
            gmg_without_smoother: s.gmg_without_smoother,
            smoother: s.smoother,
            operator_without_gmg: s.operator_without_gmg,
            other: s.other,
            total: s.total,
            dofs_per_second: s.dofs_per_second,
        };
        // SAFETY: forwarded caller contract.
        unsafe { write_out(out, v) }
    })
}

/// Mean GMRES iterations per batch, space-time unknowns and work metric.
///
/// # Safety
/// `report` must be a live handle or null; the outputs writable or null.
#[no_mangle]
pub unsafe extern "C" fn stmg_report_summary(
    report: *const StmgReport,
    mean_iterations: *mut f64,
    total_dofs: *mut usize,
    work: *mut f64,
) -> StmgStatus {
    with_report(report, |r| {
        if mean_iterations.is_null() || total_dofs.is_null() || work.is_null() {
            return fail(StmgStatus::NullPointer, "output pointer is null");
        }
        // SAFETY: checked non-null; the caller guarantees writability.
        unsafe {
            mean_iterations.write(r.mean_iterations);
            total_dofs.write(r.total_dofs);
            work.write(r.work);
        }
        StmgStatus::Ok
    })
}

/// Copy the iteration count of every batch into `buf`. `*len` holds the
/// capacity on entry and the number of batches on return; with a too small
/// buffer nothing is copied and [`StmgStatus::BufferTooSmall`] is returned.
///
/// # Safety
/// `report` must be a live handle or null; `len` writable; `buf` must hold
/// `*len` values or be null when `*len` is 0.
#[no_mangle]
pub unsafe extern "C" fn stmg_report_iterations(report: *const StmgReport, buf: *mut usize, len: *mut usize) -> StmgStatus {
    with_report(report, |r| {
        // SAFETY: caller contract.
        unsafe { copy_out(r.iterations.iter().copied(), r.iterations.len(), buf, len) }
    })
}

/// Signal of probe `probe` at the times of [`stmg_report_probe_times`].
/// Same buffer protocol as [`stmg_report_iterations`].
///
/// # Safety
/// As for [`stmg_report_iterations`].
#[no_mangle]
pub unsafe extern "C" fn stmg_report_probe_values(
    report: *const StmgReport,
    probe: usize,
    buf: *mut f64,
    len: *mut usize,
) -> StmgStatus {
    with_report(report, |r| {
        let Some(series) = r.probes.as_ref().and_then(|p| p.values.get(probe)) else {
            return fail(StmgStatus::Unavailable, format!("no probe {probe} in the report"));
        };
        // SAFETY: caller contract.
        unsafe { copy_out(series.iter().copied(), series.len(), buf, len) }
    })
}

/// Sample times of the probe signals. Same buffer protocol as
/// [`stmg_report_iterations`].
///
/// # Safety
/// As for [`stmg_report_iterations`].
#[no_mangle]
pub unsafe extern "C" fn stmg_report_probe_times(report: *const StmgReport, buf: *mut f64, len: *mut usize) -> StmgStatus {
    with_report(report, |r| {
        let Some(p) = r.probes.as_ref() else {
            return fail(StmgStatus::Unavailable, "the run recorded no probes");
        };
        // SAFETY: caller contract.
        unsafe { copy_out(p.times.iter().copied(), p.times.len(), buf, len) }
    })
}

unsafe fn copy_out<T>(items: impl Iterator<Item = T>, n: usize, buf: *mut T, len: *mut usize) -> StmgStatus {
    if len.is_null() {
        return fail(StmgStatus::NullPointer, "length pointer is null");
    }
    // SAFETY: checked non-null.
    let cap = unsafe { len.read() };
    // SAFETY: as above.
    unsafe { len.write(n) };
    if cap < n {
        return fail(StmgStatus::BufferTooSmall, format!("buffer holds {cap} values, {n} needed"));
    }
    if n > 0 && buf.is_null() {
        return fail(StmgStatus::NullPointer, "buffer is null");
    }
    for (i, v) in items.enumerate() {
        // SAFETY: `i < n <= cap` and the caller guarantees `cap` writable slots.
        unsafe { buf.add(i).write(v) };
    }
    StmgStatus::Ok
}

/// The whole report as JSON. Release the string with [`stmg_string_free`].
///
/// # Safety
/// `report` must be a live handle or null; `out` writable or null.
#[no_mangle]
pub unsafe extern "C" fn stmg_report_to_json(report: *const StmgReport, out: *mut *mut c_char) -> StmgStatus {
    with_report(report, |r| {
        let text = match serde_json::to_string(r) {
            Ok(t) => t,
            Err(e) => return fail(StmgStatus::InvalidArgument, e.to_string()),
        };
        let c = CString::new(text).unwrap_or_default();
        // SAFETY: forwarded caller contract.
        unsafe { write_out(out, c.into_raw()) }
    })
}

/// # Safety
/// `s` must come from [`stmg_report_to_json`] and not be freed yet, or be null.
#[no_mangle]
pub unsafe extern "C" fn stmg_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { CString::from_raw(s) });
    }
}
