//! Command-line front end. Exit codes: 0 ok, 1 runtime or tolerance
//! failure, 2 configuration error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{ExperimentConfig, Overrides};
use crate::ddp::solve;
use crate::doc::JacobianErrorRow;
use crate::error::{Error, Result};
use crate::harness::{gradcheck, run_campaign, timing_campaign, TimingRow};
use crate::systems::SystemKind;
use crate::tube::Algorithm;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "dtmpc",
    version,
    about = "Differentiable tube-based MPC experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One-shot trajectory optimization of the nominal task.
    Solve(Common),
    /// Closed-loop Monte Carlo campaign.
    Mpc(Common),
    /// Hypergradient route agreement and Jacobian-error sweep.
    Gradcheck(Common),
    /// Wall time per hypergradient route.
    Bench(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// dubins, quadrotor or robot_arm.
    #[arg(long)]
    pub system: Option<String>,
    /// dt-mpc or nt-mpc.
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Common {
    pub fn load(&self) -> Result<ExperimentConfig> {
        let ov = Overrides {
            system: self
                .system
                .as_deref()
                .map(str::parse::<SystemKind>)
                .transpose()?,
            algorithm: self
                .algo
                .as_deref()
                .map(str::parse::<Algorithm>)
                .transpose()?,
            trials: self.trials,
            seed: self.seed,
            threads: self.threads,
        };
        match &self.config {
            Some(p) => ExperimentConfig::from_file(p, &ov),
            None => ExperimentConfig::from_overrides(&ov),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| io_err(&path, e))
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    write_file(dir, name, &(s + "\n"))
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    outputs: &[&str],
) -> Result<()> {
    let unix_time = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "unix_time": unix_time,
        "outputs": outputs,
        "config": cfg,
        "config_toml": cfg.to_toml(),
    });
    write_json(dir, "manifest.json", &manifest)
}

fn cmd_solve(cfg: &ExperimentConfig, out: &Path) -> Result<i32> {
    let scenario = cfg.scenario()?;
    let horizon = cfg.solve.horizon.unwrap_or(cfg.task.steps);
    let x0 = scenario.initial_state(cfg.seed)?;
    let p = scenario.nominal_problem(&x0, horizon, true)?;
    let sol = solve(&p, &scenario.default_controls(horizon), &cfg.solve.solver)?;
    let n = scenario.setup.plant.state_dim();
    let m = p.n_u();
    let mut csv = String::from("k");
    for i in 0..n {
        csv += &format!(",x{i}");
    }
    for i in 0..m {
        csv += &format!(",u{i}");
    }
    csv += ",b\n";
    for (k, x) in sol.traj.xs.iter().enumerate() {
        let mut row = k.to_string();
        for i in 0..n {
            row += &format!(",{}", x[i]);
        }
        for i in 0..m {
            match sol.traj.us.get(k) {
                Some(u) => row += &format!(",{}", u[i]),
                None => row += ",",
            }
        }
        row += &format!(",{}\n", x[n]);
        csv += &row;
    }
    let end = sol
        .traj
        .xs
        .last()
        .expect("nonempty")
        .rows(0, n)
        .into_owned();
    let goal = &scenario.setup.goal;
    let stats = json!({
        "system": cfg.system.name(),
        "horizon": horizon,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "cost": sol.cost,
        "kkt_residual": sol.kkt_residual,
        "final_goal_distance": (goal.features.value(&end) - &goal.target).norm(),
        "cost_history": sol.cost_history,
    });
    write_file(out, "trajectory.csv", &csv)?;
    write_json(out, "solve_stats.json", &stats)?;
    write_manifest(out, "solve", cfg, &["trajectory.csv", "solve_stats.json"])?;
    println!(
        "{}: {} iterations, converged {}, cost {:.6e}",
        cfg.system.name(),
        sol.iterations,
        sol.converged,
        sol.cost
    );
    Ok(if sol.converged { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_mpc(cfg: &ExperimentConfig, out: &Path) -> Result<i32> {
    let (result, trials) = run_campaign(cfg, cfg.algorithm)?;
    let path = out.join("trials.jsonl");
    let mut f = std::io::BufWriter::new(fs::File::create(&path).map_err(|e| io_err(&path, e))?);
    for t in &trials {
        let line = serde_json::to_string(t).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| io_err(&path, e))?;
    }
    f.flush().map_err(|e| io_err(&path, e))?;
    write_file(
        out,
        "summary.csv",
        &format!(
            "{}\n{}\n",
            crate::harness::CampaignResult::CSV_HEADER,
            result.csv_row()
        ),
    )?;
    write_json(out, "campaign.json", &result)?;
    write_manifest(
        out,
        "mpc",
        cfg,
        &["summary.csv", "trials.jsonl", "campaign.json"],
    )?;
    println!(
        "{} {}: success {:.1}%, violation {:.1}% over {} trials",
        result.system,
        result.algorithm.name(),
        100.0 * result.success_rate,
        100.0 * result.violation_rate,
        result.n_trials
    );
    Ok(if result.panicked > 0 {
        EXIT_FAILURE
    } else {
        EXIT_OK
    })
}

fn cmd_gradcheck(cfg: &ExperimentConfig, out: &Path) -> Result<i32> {
    let report = gradcheck(cfg)?;
    let mut csv = format!("{}\n", JacobianErrorRow::CSV_HEADER);
    for r in &report.sweep {
        csv += &format!("{}\n", r.csv());
    }
    write_json(out, "gradcheck_report.json", &report)?;
    write_file(out, "jacobian_error.csv", &csv)?;
    write_manifest(
        out,
        "gradcheck",
        cfg,
        &["gradcheck_report.json", "jacobian_error.csv"],
    )?;
    for c in &report.checks {
        println!(
            "{} {}: {:.3e} (tol {:.1e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        );
    }
    Ok(if report.passed { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_bench(cfg: &ExperimentConfig, out: &Path) -> Result<i32> {
    let rows: Vec<TimingRow> = timing_campaign(cfg)?;
    let mut csv = format!("{}\n", TimingRow::CSV_HEADER);
    for r in &rows {
        csv += &format!("{}\n", r.csv());
        println!(
            "{:<18} {:>10.4} ms  (sd {:.4})",
            r.name, r.mean_ms, r.std_ms
        );
    }
    write_file(out, "timing.csv", &csv)?;
    write_manifest(out, "bench", cfg, &["timing.csv"])?;
    Ok(EXIT_OK)
}

/// Run a parsed command and map errors to exit codes.
pub fn run(cli: Cli) -> i32 {
    let (name, common) = match &cli.command {
        Command::Solve(c) => ("solve", c),
        Command::Mpc(c) => ("mpc", c),
        Command::Gradcheck(c) => ("gradcheck", c),
        Command::Bench(c) => ("bench", c),
    };
    let result = common.load().and_then(|cfg| {
        fs::create_dir_all(&common.out).map_err(|e| io_err(&common.out, e))?;
        match name {
            "solve" => cmd_solve(&cfg, &common.out),
            "mpc" => cmd_mpc(&cfg, &common.out),
            "gradcheck" => cmd_gradcheck(&cfg, &common.out),
            _ => cmd_bench(&cfg, &common.out),
        }
    });
    match result {
        Ok(code) => code,
        Err(e @ Error::Config(_)) => {
            eprintln!("{e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

/// Entry point for argument vectors; usage errors exit with code 2.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
