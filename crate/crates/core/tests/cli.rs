use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dtmpc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtmpc"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_trajectory_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = dtmpc(&["solve", "--system", "dubins"], dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,x0,x1,x2,u0,u1,b"));
    assert_eq!(lines.count(), 301);
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["command"], "solve");
    assert_eq!(m["seed"], 0);
    assert!(m["config_toml"].as_str().unwrap().contains("[task]"));
    assert_eq!(
        json(&dir.path().join("solve_stats.json"))["converged"],
        true
    );
}

#[test]
fn mpc_campaign_outputs_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "system = \"dubins\"\n[task]\nsteps = 15\n");
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let o = dtmpc(
            &[
                "mpc",
                "--config",
                &cfg,
                "--trials",
                "2",
                "--seed",
                "7",
                "--threads",
                "1",
            ],
            &out,
        );
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        out
    };
    let (a, b) = (run("a"), run("b"));
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..4], &["dubins", "dt_mpc", "2", "7"]);
    let trials = |d: &Path| -> Vec<Value> {
        fs::read_to_string(d.join("trials.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    };
    let (ta, tb) = (trials(&a), trials(&b));
    assert_eq!(ta.len(), 2);
    assert_eq!(ta[0]["seed"], 7);
    assert_eq!(ta[1]["seed"], 8);
    for (x, y) in ta.iter().zip(&tb) {
        assert_eq!(x["outcome"], y["outcome"]);
        let path = |t: &Value| -> Vec<Value> {
            t["records"]
                .as_array()
                .unwrap()
                .iter()
                .map(|r| r["x_true"].clone())
                .collect()
        };
        assert_eq!(path(x), path(y));
    }
    // the manifest's resolved config reproduces the run's config
    let m = json(&a.join("manifest.json"));
    let replay = dir.path().join("replay.toml");
    fs::write(&replay, m["config_toml"].as_str().unwrap()).unwrap();
    let c = dtmpc(
        &["mpc", "--config", replay.to_str().unwrap()],
        &dir.path().join("c"),
    );
    assert_eq!(c.status.code(), Some(0));
    let tc = trials(&dir.path().join("c"));
    assert_eq!(tc.len(), 2);
    assert_eq!(
        tc[1]["records"].as_array().unwrap().len(),
        ta[1]["records"].as_array().unwrap().len()
    );
}

#[test]
fn gradcheck_passes_and_detects_a_fault() {
    let dir = tempfile::tempdir().unwrap();
    let o = dtmpc(&["gradcheck", "--system", "dubins"], &dir.path().join("ok"));
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let r = json(&dir.path().join("ok/gradcheck_report.json"));
    assert_eq!(r["passed"], true);
    assert!(fs::read_to_string(dir.path().join("ok/jacobian_error.csv"))
        .unwrap()
        .starts_with("budget,"));

    let cfg = write_config(
        dir.path(),
        "[gradcheck]\ninject_fault = true\nbudgets = []\n",
    );
    let o = dtmpc(&["gradcheck", "--config", &cfg], &dir.path().join("bad"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL doc_full_vs_fd"));
}

#[test]
fn bench_writes_timing_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[bench]\nreps = 10\nroutes = [\"doc_full\", \"pdp\"]\n",
    );
    let o = dtmpc(&["bench", "--config", &cfg], dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    let names: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(names.len(), 3);
    for n in ["doc_full", "pdp", "ddp_iteration"] {
        assert!(names.contains(&n), "{names:?}");
    }
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "trials = 3\n[task]\nstepz = 3\n");
    let o = dtmpc(&["mpc", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("stepz"), "{err}");

    for args in [
        &["mpc", "--system", "boat"][..],
        &["mpc", "--algo", "pid"],
        &["mpc", "--config", "/nonexistent/cfg.toml"],
        &["mpc", "--trials", "0"],
        &["mpc", "--bogus"],
        &["launch"],
    ] {
        let o = dtmpc(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}
