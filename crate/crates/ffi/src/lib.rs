//! C ABI over `dlmc-core`.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. Every fallible call returns a [`DlmcStatus`]; on
//! failure the message is kept per thread and read with
//! [`dlmc_last_error`]. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dlmc_core::network::{load_feeder, parse_feeder, Feeder};
use dlmc_core::pipeline::{run_dlmc, DlmcRun, RunOptions};
use dlmc_core::report::write_dlmc_bundle;
use dlmc_core::sensitivity::Kind;
use dlmc_core::{Error, ErrorClass};

/// Status codes. Library failures share their numbers with the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlmcStatus {
    Ok = 0,
    Parse = 10,
    Validation = 11,
    Infeasible = 12,
    Numerical = 13,
    Io = 14,
    Input = 15,
    /// A required pointer argument was null.
    NullArgument = 20,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 21,
    /// Node, period or index outside the result.
    OutOfRange = 22,
    Panic = 99,
}

impl From<ErrorClass> for DlmcStatus {
    fn from(c: ErrorClass) -> Self {
        match c {
            ErrorClass::Parse => DlmcStatus::Parse,
            ErrorClass::Validation => DlmcStatus::Validation,
            ErrorClass::Infeasible => DlmcStatus::Infeasible,
            ErrorClass::Numerical => DlmcStatus::Numerical,
            ErrorClass::Io => DlmcStatus::Io,
            ErrorClass::Input => DlmcStatus::Input,
        }
    }
}

/// Which nodal marginal cost: real (P) or reactive (Q) demand.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlmcKind {
    P = 0,
    Q = 1,
}

impl From<DlmcKind> for Kind {
    fn from(k: DlmcKind) -> Self {
        match k {
            DlmcKind::P => Kind::P,
            DlmcKind::Q => Kind::Q,
        }
    }
}

/// One decomposed marginal cost, in $/p.u.h.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DlmcComponents {
    pub substation: f64,
    pub real_loss: f64,
    pub reactive_loss: f64,
    pub voltage: f64,
    pub ampacity: f64,
    pub transformer: f64,
    pub total: f64,
    pub solver_dual: f64,
    /// Relative gap between `total` and `solver_dual`.
    pub gap: f64,
}

/// Parsed feeder case.
pub struct DlmcFeeder {
    feeder: Feeder,
    ids: Vec<CString>,
}

/// Outcome of a full solve and decomposition.
pub struct DlmcResult {
    feeder: Feeder,
    run: DlmcRun,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: DlmcStatus, msg: impl Into<String>) -> DlmcStatus {
    set_error(msg);
    status
}

fn from_core(e: Error) -> DlmcStatus {
    fail(e.class().into(), e.to_string())
}

/// Runs `f`, turning panics into [`DlmcStatus::Panic`].
fn guard(f: impl FnOnce() -> DlmcStatus) -> DlmcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == DlmcStatus::Ok {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(DlmcStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, DlmcStatus> {
    if p.is_null() {
        return Err(fail(DlmcStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DlmcStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn into_handle(feeder: Feeder, out: *mut *mut DlmcFeeder) -> DlmcStatus {
    let ids = feeder
        .topology
        .nodes()
        .iter()
        .map(|n| CString::new(n.id.replace('\0', " ")).unwrap_or_default())
        .collect();
    unsafe { *out = Box::into_raw(Box::new(DlmcFeeder { feeder, ids })) };
    DlmcStatus::Ok
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call into the library on the
/// same thread.
#[no_mangle]
pub extern "C" fn dlmc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dlmc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a feeder case from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dlmc_feeder_load(
    path: *const c_char,
    out: *mut *mut DlmcFeeder,
) -> DlmcStatus {
    guard(|| {
        if out.is_null() {
            return fail(DlmcStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_feeder(path) {
            Ok(f) => into_handle(f, out),
            Err(e) => from_core(e),
        }
    })
}

/// Parses a feeder case from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dlmc_feeder_parse(
    json: *const c_char,
    out: *mut *mut DlmcFeeder,
) -> DlmcStatus {
    guard(|| {
        if out.is_null() {
            return fail(DlmcStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let text = match str_arg(json, "json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_feeder(text, "<string>") {
            Ok(f) => into_handle(f, out),
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `feeder` must come from `dlmc_feeder_load`/`dlmc_feeder_parse` or be null.
#[no_mangle]
pub unsafe extern "C" fn dlmc_feeder_free(feeder: *mut DlmcFeeder) {
    if !feeder.is_null() {
        drop(Box::from_raw(feeder));
    }
}

/// Node count including the root. Zero for a null handle.
///
/// # Safety
/// `feeder` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dlmc_feeder_node_count(feeder: *const DlmcFeeder) -> usize {
    feeder.as_ref().map_or(0, |f| f.feeder.topology.n_nodes())
}

/// Periods in the planning day. Zero for a null handle.
///
/// # Safety
/// `feeder` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dlmc_feeder_period_count(feeder: *const DlmcFeeder) -> usize {
    feeder.as_ref().map_or(0, |f| f.feeder.periods())
}

/// Id of node `index` (0 is the root), owned by the handle. Null when out
/// of range.
///
/// # Safety
/// `feeder` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dlmc_feeder_node_id(
    feeder: *const DlmcFeeder,
    index: usize,
) -> *const c_char {
    feeder
        .as_ref()
        .and_then(|f| f.ids.get(index))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Solves the day-ahead problem and decomposes every nodal marginal cost.
///
/// `horizon_end` is `"cycle"`, `"extended"` or `"extended:E"`; null means
/// the default.
///
/// # Safety
/// `feeder` must be a live handle, `horizon_end` null or NUL-terminated,
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dlmc_run(
    feeder: *const DlmcFeeder,
    horizon_end: *const c_char,
    out: *mut *mut DlmcResult,
) -> DlmcStatus {
    guard(|| {
        if out.is_null() {
            return fail(DlmcStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let Some(f) = feeder.as_ref() else {
            return fail(DlmcStatus::NullArgument, "feeder is null");
        };
        let mut opts = RunOptions::default();
        if !horizon_end.is_null() {
            let h = match str_arg(horizon_end, "horizon_end") {
                Ok(h) => h,
                Err(s) => return s,
            };
            opts.horizon_end = match h.parse() {
                Ok(h) => h,
                Err(e) => return from_core(e),
            };
        }
        match run_dlmc(&f.feeder, &opts) {
            Ok(run) => {
                let res = DlmcResult {
                    feeder: f.feeder.clone(),
                    run,
                };
                *out = Box::into_raw(Box::new(res));
                DlmcStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `result` must come from `dlmc_run` or be null.
#[no_mangle]
pub unsafe extern "C" fn dlmc_result_free(result: *mut DlmcResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Optimal objective in $. NaN for a null handle.
///
/// # Safety
/// `result` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dlmc_result_objective(result: *const DlmcResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.run.report.objective)
}

/// Largest relative gap between decomposed totals and solver duals. NaN
/// for a null handle.
///
/// # Safety
/// `result` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dlmc_result_max_gap(result: *const DlmcResult) -> f64 {
    result
        .as_ref()
        .map_or(f64::NAN, |r| r.run.reconciliation.max_gap)
}

/// Decomposition at node `node` (1-based, the root has none) and period
/// `period` (1-based).
///
/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dlmc_result_components(
    result: *const DlmcResult,
    node: usize,
    period: usize,
    kind: DlmcKind,
    out: *mut DlmcComponents,
) -> DlmcStatus {
    guard(|| {
        let Some(r) = result.as_ref() else {
            return fail(DlmcStatus::NullArgument, "result is null");
        };
        if out.is_null() {
            return fail(DlmcStatus::NullArgument, "out is null");
        }
        let kind = Kind::from(kind);
        let found = r
            .run
            .rows
            .iter()
            .position(|row| row.node == node && row.period == period && row.kind == kind);
        let Some(i) = found else {
            return fail(
                DlmcStatus::OutOfRange,
                format!("no entry for node {node}, period {period}"),
            );
        };
        let row = &r.run.rows[i];
        *out = DlmcComponents {
            substation: row.substation,
            real_loss: row.real_loss,
            reactive_loss: row.reactive_loss,
            voltage: row.voltage,
            ampacity: row.ampacity,
            transformer: row.transformer,
            total: row.total,
            solver_dual: row.solver_dual,
            gap: r.run.reconciliation.entries[i].gap,
        };
        DlmcStatus::Ok
    })
}

/// Writes the full output bundle (JSON report and CSV tables) into `dir`.
///
/// # Safety
/// `result` must be a live handle and `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dlmc_result_write(
    result: *const DlmcResult,
    dir: *const c_char,
) -> DlmcStatus {
    guard(|| {
        let Some(r) = result.as_ref() else {
            return fail(DlmcStatus::NullArgument, "result is null");
        };
        let dir = match str_arg(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        match write_dlmc_bundle(Path::new(dir), &r.feeder, &r.run) {
            Ok(()) => DlmcStatus::Ok,
            Err(e) => from_core(e),
        }
    })
}
