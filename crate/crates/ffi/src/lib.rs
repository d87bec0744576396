//! C ABI over `dtmpc`.
//!
//! Handles are opaque and owned by the caller once returned; free them with
//! the matching `_free` function. Every fallible call returns a
//! [`DtmpcStatus`], and the message of the last failure on the calling
//! thread is available from [`dtmpc_last_error`]. Array arguments are
//! `(pointer, length)` pairs measured in `double`s.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use dtmpc::config::{ExperimentConfig, Overrides};
use dtmpc::ddp::{solve, Solution};
use dtmpc::doc::{hypergradient, DocOptions, Route};
use dtmpc::dynamics::Vector;
use dtmpc::harness::check_loss;
use dtmpc::problem::OCProblem;
use dtmpc::systems::SystemKind;
use dtmpc::tube::{run_trial, Algorithm, Outcome};
use dtmpc::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtmpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    /// Solver, model or numerical failure.
    Numerical = 4,
    /// The output buffer is shorter than required.
    BufferTooSmall = 5,
    /// Call `dtmpc_problem_solve` first.
    NotSolved = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtmpcSystem {
    Dubins = 0,
    Quadrotor = 1,
    RobotArm = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtmpcRoute {
    DocFull = 0,
    DocGaussNewton = 1,
    Pdp = 2,
    FiniteDifference = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtmpcAlgorithm {
    NtMpc = 0,
    DtMpc = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtmpcOutcome {
    Success = 0,
    Violation = 1,
    Diverged = 2,
    Timeout = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DtmpcDims {
    pub n_x: usize,
    pub n_u: usize,
    pub horizon: usize,
    pub n_theta: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DtmpcSolveInfo {
    pub iterations: usize,
    pub converged: bool,
    pub cost: f64,
    pub kkt_residual: f64,
}

/// Experiment configuration.
pub struct DtmpcConfig {
    inner: ExperimentConfig,
}

/// Nominal trajectory-optimization problem of a configuration, plus its
/// most recent solution.
pub struct DtmpcProblem {
    problem: OCProblem,
    warm: Vec<Vector>,
    solver: dtmpc::ddp::SolverOptions,
    solution: Option<Solution>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn status_of(e: &Error) -> DtmpcStatus {
    match e {
        Error::Config(_) => DtmpcStatus::Config,
        Error::Dimension(_) | Error::HorizonMismatch { .. } => DtmpcStatus::InvalidArgument,
        _ => DtmpcStatus::Numerical,
    }
}

/// Run `f`, recording failures and converting panics.
fn guard(f: impl FnOnce() -> Result<(), (DtmpcStatus, String)>) -> DtmpcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DtmpcStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside dtmpc");
            DtmpcStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (DtmpcStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DtmpcStatus, String) {
    (DtmpcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn out_slice<'a>(
    ptr: *mut f64,
    len: usize,
    need: usize,
    what: &str,
) -> Result<&'a mut [f64], (DtmpcStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err((
            DtmpcStatus::BufferTooSmall,
            format!("{what} holds {len} values, {need} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, need))
}

/// Message of the last failed call on this thread, or an empty string.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn dtmpc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn dtmpc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Built-in defaults for `system`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dtmpc_config_default(
    system: DtmpcSystem,
    out: *mut *mut DtmpcConfig,
) -> DtmpcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kind = match system {
            DtmpcSystem::Dubins => SystemKind::Dubins,
            DtmpcSystem::Quadrotor => SystemKind::Quadrotor,
            DtmpcSystem::RobotArm => SystemKind::RobotArm,
        };
        let inner = ExperimentConfig::defaults(kind);
        *out = Box::into_raw(Box::new(DtmpcConfig { inner }));
        Ok(())
    })
}

/// Parse a TOML document layered over its system's defaults.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dtmpc_config_from_toml(
    toml: *const c_char,
    out: *mut *mut DtmpcConfig,
) -> DtmpcStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let src = CStr::from_ptr(toml).to_str().map_err(|e| {
            (
                DtmpcStatus::InvalidArgument,
                format!("toml is not UTF-8: {e}"),
            )
        })?;
        let inner = ExperimentConfig::from_toml(src, &Overrides::default()).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DtmpcConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from a `dtmpc_config_*` constructor, or be null.
#[no_mangle]
pub unsafe extern "C" fn dtmpc_config_free(cfg: *mut DtmpcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Nominal problem of `cfg` from its first trial start, over the MPC
/// horizon, with the safety-embedded model.
///
/// # Safety
/// `cfg` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dtmpc_problem_new(
    cfg: *const DtmpcConfig,
    out: *mut *mut DtmpcProblem,
) -> DtmpcStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = &cfg.inner;
        let scenario = c.scenario().map_err(lib_err)?;
        let x0 = scenario.initial_state(c.seed).map_err(lib_err)?;
        let problem = scenario
            .nominal_problem(&x0, c.task.horizon, true)
            .map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DtmpcProblem {
            warm: scenario.default_controls(c.task.horizon),
            problem,
            solver: c.gradcheck.solver.clone(),
            solution: None,
        }));
        Ok(())
    })
}

/// # Safety
/// `p` must come from `dtmpc_problem_new`, or be null.
#[no_mangle]
pub unsafe extern "C" fn dtmpc_problem_free(p: *mut DtmpcProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dtmpc_problem_dims(
    p: *const DtmpcProblem,
    out: *mut DtmpcDims,
) -> DtmpcStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("problem"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = DtmpcDims {
            n_x: p.problem.n_x(),
            n_u: p.problem.n_u(),
            horizon: p.problem.horizon,
            n_theta: p.problem.n_theta(),
        };
        Ok(())
    })
}

/// Copy `theta` into `out` (`len >= n_theta`).
///
/// # Safety
/// `p` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dtmpc_problem_get_theta(
    p: *const DtmpcProblem,
    out: *mut f64,
    len: usize,
) -> DtmpcStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("problem"))?;
        let dst = out_slice(out, len, p.problem.n_theta(), "out")?;
        dst.copy_from_slice(p.problem.theta.as_slice());
        Ok(())
    })
}

/// Replace `theta`; `len` must equal `n_theta`. Discards the solution.
///
/// # Safety
/// `p` must be a live handle and `theta` valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn dtmpc_problem_set_theta(
    p: *mut DtmpcProblem,
    theta: *const f64,
    len: usize,
) -> DtmpcStatus {
    guard(|| {
        let p = p.as_mut().ok_or_else(|| null("problem"))?;
        if theta.is_null() {
            return Err(null("theta"));
        }
        if len != p.problem.n_theta() {
            return Err((
                DtmpcStatus::InvalidArgument,
                format!("theta has {len} entries, expected {}", p.problem.n_theta()),
            ));
        }
        let t = std::slice::from_raw_parts(theta, len);
        if t.iter().any(|v| !v.is_finite()) {
            return Err((DtmpcStatus::InvalidArgument, "theta is not finite".into()));
        }
        p.problem.theta = Vector::from_row_slice(t);
        p.solution = None;
        Ok(())
    })
}

/// Solve with at most `budget` DDP iterations (0 keeps the configured
/// budget), warm-started from the previous solution when there is one.
///
/// # Safety
/// `p` must be a live handle; `info` may be null.
#[no_mangle]
pub unsafe extern "C" fn dtmpc_problem_solve(
    p: *mut DtmpcProblem,
    budget: usize,
    info: *mut DtmpcSolveInfo,
) -> DtmpcStatus {
    guard(|| {
        let p = p.as_mut().ok_or_else(|| null("problem"))?;
        let mut opts = p.solver.clone();
        if budget > 0 {
            opts.budget = budget;
        }
        let warm = p
            .solution
            .as_ref()
            .map_or_else(|| p.warm.clone(), |s| s.traj.us.clone());
        let s = solve(&p.problem, &warm, &opts).map_err(lib_err)?;
        if let Some(info) = info.as_mut() {
            *info = DtmpcSolveInfo {
                iterations: s.iterations,
                converged: s.converged,
                cost: s.cost,
                kkt_residual: s.kkt_residual,
            };
        }
        p.solution = Some(s);
        Ok(())
    })
}

/// Copy the solved trajectory: `xs` gets `(horizon + 1) * n_x` values,
/// `us` gets `horizon * n_u`, both row-major by time step.
///
/// # Safety
/// `p` must be a live handle; `xs` and `us` valid for their lengths.
#[no_mangle]
pub unsafe extern "C" fn dtmpc_problem_trajectory(
    p: *const DtmpcProblem,
    xs: *mut f64,
    xs_len: usize,
    us: *mut f64,
    us_len: usize,
) -> DtmpcStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("problem"))?;
        let s = p
            .solution
            .as_ref()
            .ok_or((DtmpcStatus::NotSolved, "problem has not been solved".into()))?;
        let (n, m, h) = (p.problem.n_x(), p.problem.n_u(), p.problem.horizon);
        let xd = out_slice(xs, xs_len, (h + 1) * n, "xs")?;
        let ud = out_slice(us, us_len, h * m, "us")?;
        for (k, x) in s.traj.xs.iter().enumerate() {
            xd[k * n..(k + 1) * n].copy_from_slice(x.as_slice());
        }
        for (k, u) in s.traj.us.iter().enumerate() {
            ud[k * m..(k + 1) * m].copy_from_slice(u.as_slice());
        }
        Ok(())
    })
}

/// Gradient of the unit-weight quadratic loss `sum |x_k|^2 + sum |u_k|^2`
/// with respect to `theta`, through the last solution, by `route`.
///
/// # Safety
/// `p` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dtmpc_problem_hypergradient(
    p: *const DtmpcProblem,
    route: DtmpcRoute,
    out: *mut f64,
    len: usize,
) -> DtmpcStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("problem"))?;
        let s = p
            .solution
            .as_ref()
            .ok_or((DtmpcStatus::NotSolved, "problem has not been solved".into()))?;
        let dst = out_slice(out, len, p.problem.n_theta(), "out")?;
        let route = match route {
            DtmpcRoute::DocFull => Route::DocFull,
            DtmpcRoute::DocGaussNewton => Route::DocGaussNewton,
            DtmpcRoute::Pdp => Route::Pdp,
            DtmpcRoute::FiniteDifference => Route::FiniteDifference,
        };
        let loss = check_loss(&p.problem, &Vector::zeros(p.problem.n_x()));
        let g =
            hypergradient(&p.problem, s, &loss, route, &DocOptions::default()).map_err(lib_err)?;
        dst.copy_from_slice(g.grad.as_slice());
        Ok(())
    })
}

/// Run one closed-loop trial of `cfg` with trial seed `seed`.
///
/// # Safety
/// `cfg` must be a live handle; `outcome` writable; `steps` may be null.
#[no_mangle]
pub unsafe extern "C" fn dtmpc_run_trial(
    cfg: *const DtmpcConfig,
    algorithm: DtmpcAlgorithm,
    seed: u64,
    outcome: *mut DtmpcOutcome,
    steps: *mut usize,
) -> DtmpcStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let outcome = outcome.as_mut().ok_or_else(|| null("outcome"))?;
        let c = &cfg.inner;
        let scenario = c.scenario().map_err(lib_err)?;
        let x0 = scenario.initial_state(seed).map_err(lib_err)?;
        let algo = match algorithm {
            DtmpcAlgorithm::NtMpc => Algorithm::NtMpc,
            DtmpcAlgorithm::DtMpc => Algorithm::DtMpc,
        };
        let r = run_trial(&scenario.setup, &x0, seed, algo, &c.mpc);
        *outcome = match r.outcome {
            Outcome::Success => DtmpcOutcome::Success,
            Outcome::Violation => DtmpcOutcome::Violation,
            Outcome::Diverged => DtmpcOutcome::Diverged,
            Outcome::Timeout => DtmpcOutcome::Timeout,
        };
        if let Some(steps) = steps.as_mut() {
            *steps = r.steps;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn null_handles_are_reported() {
        let mut d = DtmpcDims::default();
        let s = unsafe { dtmpc_problem_dims(ptr::null(), &mut d) };
        assert_eq!(s, DtmpcStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(dtmpc_last_error()) };
        assert!(msg.to_str().unwrap().contains("problem"));
    }

    #[test]
    fn success_clears_the_error() {
        let mut cfg = ptr::null_mut();
        unsafe {
            assert_eq!(
                dtmpc_config_default(DtmpcSystem::Dubins, ptr::null_mut()),
                DtmpcStatus::NullPointer
            );
            assert_eq!(
                dtmpc_config_default(DtmpcSystem::Dubins, &mut cfg),
                DtmpcStatus::Ok
            );
            assert_eq!(CStr::from_ptr(dtmpc_last_error()).to_bytes().len(), 0);
            dtmpc_config_free(cfg);
        }
    }
}
