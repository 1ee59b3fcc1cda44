//! C ABI over the dtac simulator: load a scenario, run it, query the
//! trajectory, and solve the centralized oracle or the delay-augmented
//! spectral check without touching Rust types.
//!
//! Every constructor hands back an opaque handle owned by the library and
//! released by the matching `_free` function. Fallible calls return a
//! `DtacStatus`; on any non-OK status the thread-local message retrieved by
//! `dtac_last_error` describes the failure. Out-pointers are written only
//! when the call returns `DTAC_STATUS_OK`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use dtac_core::scenario::Scenario;
use dtac_core::{
    build_augmented, solve_dual_bisection, spectral_radius_check, OracleSolution, RunRecord,
};

/// Outcome of a fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DtacStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The scenario text or file failed to parse or validate.
    InvalidScenario = 3,
    /// The run or the oracle failed; see `dtac_last_error`.
    RunFailed = 4,
    /// A caller-provided buffer does not match the needed length.
    BadLength = 5,
}

/// Loaded scenario: network, delay schedule, agents, and run settings.
pub struct DtacScenario {
    inner: Scenario,
}

/// Finished run: the recorded trajectory and its summary values.
pub struct DtacRun {
    record: RunRecord,
}

/// Centralized dual-bisection solution.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct DtacOracleResult {
    /// Optimal dual multiplier.
    pub x_star: f64,
    /// Total cost at the optimal allocation.
    pub objective: f64,
    /// Coupling residual at the optimal allocation.
    pub residual: f64,
    /// True when the multiplier or parts of the allocation were fixed by
    /// feasibility rather than strict convexity.
    pub nonunique: bool,
}

/// Spectral radii of the delay-augmented consensus matrix.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct DtacSpectralReport {
    /// Radius of the centered weight matrix.
    pub rho_w_tilde: f64,
    /// Radius of the delay-lifted centered matrix.
    pub rho_pw_tilde: f64,
    /// Homogeneous-delay prediction: radius of the centered matrix raised
    /// to 1/(tau_bar + 1); exact under a constant schedule, an upper bound
    /// otherwise.
    pub prediction: f64,
    /// Largest delay in the schedule.
    pub tau_bar: usize,
    /// Lifted radius is strictly below one.
    pub contractive: bool,
    /// Lifted radius is at or below the prediction.
    pub bound_satisfied: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: DtacStatus, message: impl std::fmt::Display) -> DtacStatus {
    let text = CString::new(message.to_string())
        .unwrap_or_else(|_| CString::new("error message contained a NUL byte").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
    status
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Copy the message of the most recent failure on this thread into `buf`
/// (NUL-terminated, truncated to `cap` bytes) and return the full message
/// length including the terminator. Returns 0 when no failure is recorded.
/// Passing a null `buf` or zero `cap` just reports the needed length.
///
/// # Safety
/// `buf` must either be null or point to at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dtac_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let slot = slot.borrow();
        let Some(message) = slot.as_ref() else {
            return 0;
        };
        let bytes = message.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            // SAFETY: caller guarantees `cap` writable bytes behind `buf`.
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            // SAFETY: n >= 1 here, so buf[n-1] is in bounds.
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, DtacStatus> {
    if ptr.is_null() {
        return Err(fail(DtacStatus::NullArgument, "string argument is null"));
    }
    // SAFETY: caller guarantees a NUL-terminated string behind `ptr`.
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| fail(DtacStatus::InvalidUtf8, e))
}

/// Load a scenario file. On success writes a handle that must be released
/// with `dtac_scenario_free`.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out` must point to a
/// writable `DtacScenario*` slot.
#[no_mangle]
pub unsafe extern "C" fn dtac_scenario_load(
    path: *const c_char,
    out: *mut *mut DtacScenario,
) -> DtacStatus {
    if out.is_null() {
        return fail(DtacStatus::NullArgument, "out pointer is null");
    }
    let path = match read_str(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match Scenario::from_file(Path::new(path)) {
        Ok(inner) => {
            clear_error();
            // SAFETY: `out` is writable per the contract above.
            *out = Box::into_raw(Box::new(DtacScenario { inner }));
            DtacStatus::Ok
        }
        Err(e) => fail(DtacStatus::InvalidScenario, e),
    }
}

/// Parse a scenario from text. `name` labels the scenario in outputs and
/// error messages. On success writes a handle that must be released with
/// `dtac_scenario_free`.
///
/// # Safety
/// `text` and `name` must point to NUL-terminated strings and `out` must
/// point to a writable `DtacScenario*` slot.
#[no_mangle]
pub unsafe extern "C" fn dtac_scenario_parse(
    text: *const c_char,
    name: *const c_char,
    out: *mut *mut DtacScenario,
) -> DtacStatus {
    if out.is_null() {
        return fail(DtacStatus::NullArgument, "out pointer is null");
    }
    let (text, name) = match (read_str(text), read_str(name)) {
        (Ok(t), Ok(n)) => (t, n),
        (Err(status), _) | (_, Err(status)) => return status,
    };
    match Scenario::parse(text, name) {
        Ok(inner) => {
            clear_error();
            // SAFETY: `out` is writable per the contract above.
            *out = Box::into_raw(Box::new(DtacScenario { inner }));
            DtacStatus::Ok
        }
        Err(e) => fail(DtacStatus::InvalidScenario, e),
    }
}

/// Release a scenario handle. Null is ignored.
///
/// # Safety
/// `scenario` must be a handle returned by `dtac_scenario_load` or
/// `dtac_scenario_parse` that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn dtac_scenario_free(scenario: *mut DtacScenario) {
    if scenario.is_null() {
        return;
    }
    // SAFETY: caller guarantees the handle came from this library.
    drop(Box::from_raw(scenario));
}

/// Number of agents in the scenario; 0 when the handle is null.
///
/// # Safety
/// `scenario` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn dtac_scenario_agents(scenario: *const DtacScenario) -> usize {
    // SAFETY: non-null handles are live per the contract above.
    scenario.as_ref().map_or(0, |s| s.inner.problem.n())
}

/// Largest link delay in the scenario's schedule; 0 when the handle is null.
///
/// # Safety
/// `scenario` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn dtac_scenario_tau_bar(scenario: *const DtacScenario) -> usize {
    // SAFETY: non-null handles are live per the contract above.
    scenario.as_ref().map_or(0, |s| s.inner.delays.tau_bar)
}

/// Execute the scenario. On success writes a run handle that must be
/// released with `dtac_run_free`.
///
/// # Safety
/// `scenario` must be a live handle from this library and `out` must point
/// to a writable `DtacRun*` slot.
#[no_mangle]
pub unsafe extern "C" fn dtac_scenario_run(
    scenario: *const DtacScenario,
    out: *mut *mut DtacRun,
) -> DtacStatus {
    if out.is_null() {
        return fail(DtacStatus::NullArgument, "out pointer is null");
    }
    // SAFETY: non-null handles are live per the contract above.
    let Some(scenario) = scenario.as_ref() else {
        return fail(DtacStatus::NullArgument, "scenario handle is null");
    };
    match scenario.inner.execute() {
        Ok(record) => {
            clear_error();
            // SAFETY: `out` is writable per the contract above.
            *out = Box::into_raw(Box::new(DtacRun { record }));
            DtacStatus::Ok
        }
        Err(e) => fail(DtacStatus::RunFailed, e),
    }
}

/// Release a run handle. Null is ignored.
///
/// # Safety
/// `run` must be a handle returned by `dtac_scenario_run` that has not been
/// freed yet.
#[no_mangle]
pub unsafe extern "C" fn dtac_run_free(run: *mut DtacRun) {
    if run.is_null() {
        return;
    }
    // SAFETY: caller guarantees the handle came from this library.
    drop(Box::from_raw(run));
}

/// Number of agents in the run; 0 when the handle is null.
///
/// # Safety
/// `run` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn dtac_run_agents(run: *const DtacRun) -> usize {
    // SAFETY: non-null handles are live per the contract above.
    run.as_ref().map_or(0, |r| r.record.n())
}

/// Number of iterations the run executed; 0 when the handle is null.
///
/// # Safety
/// `run` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn dtac_run_iterations(run: *const DtacRun) -> usize {
    // SAFETY: non-null handles are live per the contract above.
    run.as_ref().map_or(0, |r| r.record.iterations_run)
}

/// Whether the final state met the run's tolerances; false when the handle
/// is null.
///
/// # Safety
/// `run` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn dtac_run_converged(run: *const DtacRun) -> bool {
    // SAFETY: non-null handles are live per the contract above.
    run.as_ref().is_some_and(|r| r.record.converged)
}

/// Total cost at the final state; NaN when the handle is null.
///
/// # Safety
/// `run` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn dtac_run_objective(run: *const DtacRun) -> f64 {
    // SAFETY: non-null handles are live per the contract above.
    run.as_ref().map_or(f64::NAN, |r| r.record.final_objective)
}

/// Mean coupling violation at the final state; NaN when the handle is null.
///
/// # Safety
/// `run` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn dtac_run_final_deviation(run: *const DtacRun) -> f64 {
    // SAFETY: non-null handles are live per the contract above.
    run.as_ref()
        .map_or(f64::NAN, |r| r.record.d_bar(r.record.len() - 1))
}

unsafe fn copy_slice(values: &[f64], out: *mut f64, len: usize) -> DtacStatus {
    if out.is_null() {
        return fail(DtacStatus::NullArgument, "out buffer is null");
    }
    if len != values.len() {
        return fail(
            DtacStatus::BadLength,
            format!("buffer holds {len} values, need {}", values.len()),
        );
    }
    // SAFETY: caller guarantees `len` writable doubles behind `out`.
    std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    clear_error();
    DtacStatus::Ok
}

/// Copy the final allocation into `out`, which must hold exactly
/// `dtac_run_agents` doubles.
///
/// # Safety
/// `run` must be a live handle from this library and `out` must point to
/// `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dtac_run_final_y(
    run: *const DtacRun,
    out: *mut f64,
    len: usize,
) -> DtacStatus {
    // SAFETY: non-null handles are live per the contract above.
    let Some(run) = run.as_ref() else {
        return fail(DtacStatus::NullArgument, "run handle is null");
    };
    copy_slice(run.record.final_y(), out, len)
}

/// Copy the final local dual variables into `out`, which must hold exactly
/// `dtac_run_agents` doubles.
///
/// # Safety
/// `run` must be a live handle from this library and `out` must point to
/// `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dtac_run_final_x(
    run: *const DtacRun,
    out: *mut f64,
    len: usize,
) -> DtacStatus {
    // SAFETY: non-null handles are live per the contract above.
    let Some(run) = run.as_ref() else {
        return fail(DtacStatus::NullArgument, "run handle is null");
    };
    copy_slice(run.record.final_x(), out, len)
}

/// Copy the final feasibility trackers into `out`, which must hold exactly
/// `dtac_run_agents` doubles.
///
/// # Safety
/// `run` must be a live handle from this library and `out` must point to
/// `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dtac_run_final_d(
    run: *const DtacRun,
    out: *mut f64,
    len: usize,
) -> DtacStatus {
    // SAFETY: non-null handles are live per the contract above.
    let Some(run) = run.as_ref() else {
        return fail(DtacStatus::NullArgument, "run handle is null");
    };
    copy_slice(run.record.final_d(), out, len)
}

fn oracle_for(scenario: &DtacScenario) -> Result<OracleSolution, DtacStatus> {
    solve_dual_bisection(&scenario.inner.problem).map_err(|e| fail(DtacStatus::RunFailed, e))
}

/// Solve the centralized dual problem and write its summary into `out`.
///
/// # Safety
/// `scenario` must be a live handle from this library and `out` must point
/// to a writable `DtacOracleResult`.
#[no_mangle]
pub unsafe extern "C" fn dtac_scenario_oracle(
    scenario: *const DtacScenario,
    out: *mut DtacOracleResult,
) -> DtacStatus {
    if out.is_null() {
        return fail(DtacStatus::NullArgument, "out pointer is null");
    }
    // SAFETY: non-null handles are live per the contract above.
    let Some(scenario) = scenario.as_ref() else {
        return fail(DtacStatus::NullArgument, "scenario handle is null");
    };
    let solution = match oracle_for(scenario) {
        Ok(s) => s,
        Err(status) => return status,
    };
    clear_error();
    // SAFETY: `out` is writable per the contract above.
    *out = DtacOracleResult {
        x_star: solution.x_star,
        objective: solution.objective,
        residual: solution.residual,
        nonunique: solution.nonunique,
    };
    DtacStatus::Ok
}

/// Solve the centralized dual problem and copy the optimal allocation into
/// `out`, which must hold exactly `dtac_scenario_agents` doubles.
///
/// # Safety
/// `scenario` must be a live handle from this library and `out` must point
/// to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dtac_scenario_oracle_allocation(
    scenario: *const DtacScenario,
    out: *mut f64,
    len: usize,
) -> DtacStatus {
    // SAFETY: non-null handles are live per the contract above.
    let Some(scenario) = scenario.as_ref() else {
        return fail(DtacStatus::NullArgument, "scenario handle is null");
    };
    let solution = match oracle_for(scenario) {
        Ok(s) => s,
        Err(status) => return status,
    };
    copy_slice(&solution.y_star, out, len)
}

/// Build the delay-augmented consensus matrix of the scenario and write its
/// spectral summary into `out`.
///
/// # Safety
/// `scenario` must be a live handle from this library and `out` must point
/// to a writable `DtacSpectralReport`.
#[no_mangle]
pub unsafe extern "C" fn dtac_scenario_spectral(
    scenario: *const DtacScenario,
    out: *mut DtacSpectralReport,
) -> DtacStatus {
    if out.is_null() {
        return fail(DtacStatus::NullArgument, "out pointer is null");
    }
    // SAFETY: non-null handles are live per the contract above.
    let Some(scenario) = scenario.as_ref() else {
        return fail(DtacStatus::NullArgument, "scenario handle is null");
    };
    let aug = build_augmented(&scenario.inner.network, &scenario.inner.delays);
    let report = spectral_radius_check(&aug);
    clear_error();
    // SAFETY: `out` is writable per the contract above.
    *out = DtacSpectralReport {
        rho_w_tilde: report.rho_w_tilde,
        rho_pw_tilde: report.rho_pw_tilde,
        prediction: report.homogeneous_prediction,
        tau_bar: report.tau_bar,
        contractive: report.is_contractive,
        bound_satisfied: report.bound_satisfied,
    };
    DtacStatus::Ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use std::ptr;

    const SCENARIO: &str = "\
[network]
kind = cycle
n = 4

[delays]
mode = constant
tau_bar = 2

[agents]
count = 4
b_total = 8
box = 0 10
cost = quadratic 1 0

[run]
variant = dtac
c = 2
max_iters = 400
termination = fixed
";

    fn parse_handle() -> *mut DtacScenario {
        let text = CString::new(SCENARIO).unwrap();
        let name = CString::new("ffi-test").unwrap();
        let mut handle = ptr::null_mut();
        let status = unsafe { dtac_scenario_parse(text.as_ptr(), name.as_ptr(), &mut handle) };
        assert_eq!(status, DtacStatus::Ok);
        assert!(!handle.is_null());
        handle
    }

    #[test]
    fn parse_run_query_free_round_trip() {
        let scenario = parse_handle();
        unsafe {
            assert_eq!(dtac_scenario_agents(scenario), 4);
            assert_eq!(dtac_scenario_tau_bar(scenario), 2);

            let mut run = ptr::null_mut();
            assert_eq!(dtac_scenario_run(scenario, &mut run), DtacStatus::Ok);
            assert_eq!(dtac_run_agents(run), 4);
            assert_eq!(dtac_run_iterations(run), 400);
            assert!(dtac_run_final_deviation(run).abs() < 1e-9);

            let mut y = [0.0; 4];
            assert_eq!(dtac_run_final_y(run, y.as_mut_ptr(), 4), DtacStatus::Ok);
            for value in y {
                assert!((value - 2.0).abs() < 1e-6, "symmetric split, got {value}");
            }

            let mut oracle = DtacOracleResult {
                x_star: 0.0,
                objective: 0.0,
                residual: 0.0,
                nonunique: true,
            };
            assert_eq!(dtac_scenario_oracle(scenario, &mut oracle), DtacStatus::Ok);
            assert!((oracle.x_star + 4.0).abs() < 1e-6);

            let mut report = DtacSpectralReport {
                rho_w_tilde: 0.0,
                rho_pw_tilde: 0.0,
                prediction: 0.0,
                tau_bar: 0,
                contractive: false,
                bound_satisfied: false,
            };
            assert_eq!(
                dtac_scenario_spectral(scenario, &mut report),
                DtacStatus::Ok
            );
            assert!(report.contractive);
            assert!(report.bound_satisfied);

            dtac_run_free(run);
            dtac_scenario_free(scenario);
        }
    }

    #[test]
    fn load_reads_scenario_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ffi.scn");
        let mut file = std::fs::File::create(&path).unwrap();
        file.write_all(SCENARIO.as_bytes()).unwrap();
        drop(file);

        let c_path = CString::new(path.to_str().unwrap()).unwrap();
        let mut handle = ptr::null_mut();
        let status = unsafe { dtac_scenario_load(c_path.as_ptr(), &mut handle) };
        assert_eq!(status, DtacStatus::Ok);
        unsafe {
            assert_eq!(dtac_scenario_agents(handle), 4);
            dtac_scenario_free(handle);
        }
    }

    #[test]
    fn null_arguments_are_rejected_with_messages() {
        unsafe {
            let mut handle = ptr::null_mut();
            assert_eq!(
                dtac_scenario_load(ptr::null(), &mut handle),
                DtacStatus::NullArgument
            );

            let mut buf = [0 as c_char; 128];
            let needed = dtac_last_error(buf.as_mut_ptr(), buf.len());
            assert!(needed > 0);
            let message = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
            assert!(message.contains("null"));

            assert_eq!(dtac_scenario_agents(ptr::null()), 0);
            assert!(dtac_run_objective(ptr::null()).is_nan());
            dtac_scenario_free(ptr::null_mut());
            dtac_run_free(ptr::null_mut());
        }
    }

    #[test]
    fn parse_errors_surface_through_last_error() {
        let text = CString::new("[network]\nkind = cycle\n").unwrap();
        let name = CString::new("broken").unwrap();
        let mut handle = ptr::null_mut();
        let status = unsafe { dtac_scenario_parse(text.as_ptr(), name.as_ptr(), &mut handle) };
        assert_eq!(status, DtacStatus::InvalidScenario);
        assert!(handle.is_null());

        let mut buf = [0 as c_char; 256];
        let needed = unsafe { dtac_last_error(buf.as_mut_ptr(), buf.len()) };
        assert!(needed > 0);
        let message = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
        assert!(message.contains("n"), "unexpected message: {message}");
    }

    #[test]
    fn wrong_buffer_length_is_rejected() {
        let scenario = parse_handle();
        unsafe {
            let mut run = ptr::null_mut();
            assert_eq!(dtac_scenario_run(scenario, &mut run), DtacStatus::Ok);
            let mut small = [0.0; 2];
            assert_eq!(
                dtac_run_final_y(run, small.as_mut_ptr(), 2),
                DtacStatus::BadLength
            );
            dtac_run_free(run);
            dtac_scenario_free(scenario);
        }
    }
}
