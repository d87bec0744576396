use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use dtmpc_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(dtmpc_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let n: f64 = b.iter().map(|y| y * y).sum();
    d.sqrt() / n.sqrt().max(1e-12)
}

struct Problem(*mut DtmpcProblem, *mut DtmpcConfig);

impl Drop for Problem {
    fn drop(&mut self) {
        unsafe {
            dtmpc_problem_free(self.0);
            dtmpc_config_free(self.1);
        }
    }
}

fn dubins() -> Problem {
    let mut cfg = ptr::null_mut();
    let mut p = ptr::null_mut();
    unsafe {
        assert_eq!(
            dtmpc_config_default(DtmpcSystem::Dubins, &mut cfg),
            DtmpcStatus::Ok
        );
        assert_eq!(dtmpc_problem_new(cfg, &mut p), DtmpcStatus::Ok);
    }
    Problem(p, cfg)
}

#[test]
fn solve_and_routes_agree() {
    let p = dubins();
    let mut d = DtmpcDims::default();
    let mut info = DtmpcSolveInfo::default();
    unsafe {
        assert_eq!(dtmpc_problem_dims(p.0, &mut d), DtmpcStatus::Ok);
        assert_eq!(dtmpc_problem_solve(p.0, 0, &mut info), DtmpcStatus::Ok);
    }
    assert!(info.converged && info.cost.is_finite());
    assert_eq!(d.n_x, 4);
    let mut xs = vec![0.0; (d.horizon + 1) * d.n_x];
    let mut us = vec![0.0; d.horizon * d.n_u];
    let s = unsafe {
        dtmpc_problem_trajectory(p.0, xs.as_mut_ptr(), xs.len(), us.as_mut_ptr(), us.len())
    };
    assert_eq!(s, DtmpcStatus::Ok);
    assert_eq!(&xs[..3], &[0.0, 0.0, std::f64::consts::FRAC_PI_4]);

    let grad = |route| {
        let mut g = vec![0.0; d.n_theta];
        let s = unsafe { dtmpc_problem_hypergradient(p.0, route, g.as_mut_ptr(), g.len()) };
        assert_eq!(s, DtmpcStatus::Ok, "{}", last_error());
        g
    };
    let full = grad(DtmpcRoute::DocFull);
    assert!(rel(&full, &grad(DtmpcRoute::Pdp)) < 1e-8);
    assert!(rel(&full, &grad(DtmpcRoute::FiniteDifference)) < 1e-3);
}

#[test]
fn theta_round_trip_and_validation() {
    let p = dubins();
    let mut d = DtmpcDims::default();
    unsafe { dtmpc_problem_dims(p.0, &mut d) };
    let mut theta = vec![0.0; d.n_theta];
    unsafe {
        assert_eq!(
            dtmpc_problem_get_theta(p.0, theta.as_mut_ptr(), theta.len()),
            DtmpcStatus::Ok
        );
        theta[0] *= 2.0;
        assert_eq!(
            dtmpc_problem_set_theta(p.0, theta.as_ptr(), theta.len()),
            DtmpcStatus::Ok
        );
        let mut back = vec![0.0; d.n_theta];
        dtmpc_problem_get_theta(p.0, back.as_mut_ptr(), back.len());
        assert_eq!(back, theta);
        assert_eq!(
            dtmpc_problem_set_theta(p.0, theta.as_ptr(), theta.len() - 1),
            DtmpcStatus::InvalidArgument
        );
        theta[1] = f64::NAN;
        assert_eq!(
            dtmpc_problem_set_theta(p.0, theta.as_ptr(), theta.len()),
            DtmpcStatus::InvalidArgument
        );
    }
}

#[test]
fn errors_map_to_status_codes() {
    let p = dubins();
    let mut g = vec![0.0; 2];
    unsafe {
        assert_eq!(
            dtmpc_problem_hypergradient(p.0, DtmpcRoute::DocFull, g.as_mut_ptr(), g.len()),
            DtmpcStatus::NotSolved
        );
        dtmpc_problem_solve(p.0, 0, ptr::null_mut());
        assert_eq!(
            dtmpc_problem_hypergradient(p.0, DtmpcRoute::DocFull, g.as_mut_ptr(), g.len()),
            DtmpcStatus::BufferTooSmall
        );
    }
    assert!(last_error().contains("needed"));

    let bad = CString::new("[task]\nstepz = 3\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { dtmpc_config_from_toml(bad.as_ptr(), &mut cfg) },
        DtmpcStatus::Config
    );
    assert!(cfg.is_null());
    assert!(last_error().contains("stepz"));
    assert_eq!(
        unsafe { dtmpc_config_from_toml(ptr::null(), &mut cfg) },
        DtmpcStatus::NullPointer
    );
}

#[test]
fn short_trial_runs() {
    let src = CString::new("system = \"dubins\"\n[task]\nsteps = 5\n").unwrap();
    let mut cfg = ptr::null_mut();
    let mut outcome = DtmpcOutcome::Success;
    let mut steps = 0usize;
    unsafe {
        assert_eq!(
            dtmpc_config_from_toml(src.as_ptr(), &mut cfg),
            DtmpcStatus::Ok
        );
        let s = dtmpc_run_trial(cfg, DtmpcAlgorithm::DtMpc, 3, &mut outcome, &mut steps);
        dtmpc_config_free(cfg);
        assert_eq!(s, DtmpcStatus::Ok);
    }
    assert_eq!(outcome, DtmpcOutcome::Timeout);
    assert_eq!(steps, 5);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(dtmpc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Compile and link a C program against the generated header and the
/// static library built alongside this test.
#[test]
fn c_program_links_against_header() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = root.join("include/dtmpc.h");
    assert!(header.exists(), "cbindgen header missing");
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libdtmpc_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "dtmpc.h"
int main(void) {
    DtmpcConfig *cfg = NULL;
    DtmpcProblem *p = NULL;
    DtmpcDims d;
    DtmpcSolveInfo info;
    if (dtmpc_config_default(DTMPC_SYSTEM_DUBINS, &cfg) != DTMPC_STATUS_OK) return 10;
    if (dtmpc_problem_new(cfg, &p) != DTMPC_STATUS_OK) return 11;
    if (dtmpc_problem_dims(p, &d) != DTMPC_STATUS_OK) return 12;
    if (dtmpc_problem_solve(p, 0, &info) != DTMPC_STATUS_OK || !info.converged) return 13;
    double g[64];
    if (d.n_theta > 64) return 14;
    if (dtmpc_problem_hypergradient(p, DTMPC_ROUTE_DOC_GAUSS_NEWTON, g, 64) != DTMPC_STATUS_OK) return 15;
    if (dtmpc_problem_dims(NULL, &d) != DTMPC_STATUS_NULL_POINTER) return 16;
    printf("%s %zu\n", dtmpc_version(), d.n_theta);
    dtmpc_problem_free(p);
    dtmpc_config_free(cfg);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(root.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.trim(), format!("{} 11", env!("CARGO_PKG_VERSION")));
}
