//! Monte Carlo campaigns, gradient-precision sweeps and timing runs.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::ddp::{solve, Solution, SolverOptions};
use crate::doc::{
    hypergradient, jacobian_error_experiment, DocOptions, JacobianErrorRow, QuadraticLoss, Route,
};
use crate::dynamics::Vector;
use crate::error::{Error, Result};
use crate::problem::OCProblem;
use crate::systems::Scenario;
use crate::tube::{run_trial, Algorithm, Outcome, TrialResult};

/// Per-trial summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub index: usize,
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: usize,
    /// Goal-feature distance at the last state.
    pub final_distance: Option<f64>,
    /// Smallest safety value seen, including the last state.
    pub min_h: Option<f64>,
    pub mean_step_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub system: String,
    pub algorithm: Algorithm,
    pub n_trials: usize,
    pub base_seed: u64,
    pub successes: usize,
    /// Collisions and box exits.
    pub violations: usize,
    /// Aborted trials; counted as violations in `violation_rate`.
    pub diverged: usize,
    pub timeouts: usize,
    pub success_rate: f64,
    pub violation_rate: f64,
    pub step_ms_mean: f64,
    pub step_ms_p95: f64,
    /// Trials that panicked instead of finishing.
    pub panicked: usize,
    pub trials: Vec<TrialSummary>,
    pub version: String,
}

impl CampaignResult {
    pub const CSV_HEADER: &'static str =
        "system,algorithm,n_trials,base_seed,successes,violations,diverged,timeouts,success_rate,violation_rate,step_ms_mean,step_ms_p95";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.system,
            self.algorithm.name(),
            self.n_trials,
            self.base_seed,
            self.successes,
            self.violations,
            self.diverged,
            self.timeouts,
            self.success_rate,
            self.violation_rate,
            self.step_ms_mean,
            self.step_ms_p95
        )
    }

    /// Aggregate finished trials, in index order.
    pub fn from_trials(
        cfg: &ExperimentConfig,
        scenario: &Scenario,
        algo: Algorithm,
        trials: &[TrialResult],
    ) -> Self {
        let count = |o: Outcome| trials.iter().filter(|t| t.outcome == o).count();
        let n = trials.len();
        let mut step_ms: Vec<f64> = trials
            .iter()
            .flat_map(|t| t.records.iter().map(|r| r.step_ms))
            .collect();
        step_ms.sort_by(f64::total_cmp);
        let mean = if step_ms.is_empty() {
            0.0
        } else {
            step_ms.iter().sum::<f64>() / step_ms.len() as f64
        };
        let p95 = step_ms
            .get(((step_ms.len() as f64 * 0.95).ceil() as usize).saturating_sub(1))
            .copied()
            .unwrap_or(0.0);
        let summaries = trials
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let x = Vector::from_row_slice(&t.final_x);
                let goal = &scenario.setup.goal;
                let d = (goal.features.value(&x) - &goal.target).norm();
                let min_h = t
                    .records
                    .iter()
                    .filter_map(|r| r.h_true)
                    .chain(t.final_h)
                    .reduce(f64::min);
                let ms: f64 = t.records.iter().map(|r| r.step_ms).sum();
                TrialSummary {
                    index: i,
                    seed: t.seed,
                    outcome: t.outcome,
                    steps: t.steps,
                    final_distance: d.is_finite().then_some(d),
                    min_h,
                    mean_step_ms: if t.records.is_empty() {
                        0.0
                    } else {
                        ms / t.records.len() as f64
                    },
                }
            })
            .collect();
        let (successes, violations, diverged, timeouts) = (
            count(Outcome::Success),
            count(Outcome::Violation),
            count(Outcome::Diverged),
            count(Outcome::Timeout),
        );
        CampaignResult {
            system: cfg.system.name().into(),
            algorithm: algo,
            n_trials: n,
            base_seed: cfg.seed,
            successes,
            violations,
            diverged,
            timeouts,
            success_rate: successes as f64 / n as f64,
            violation_rate: (violations + diverged) as f64 / n as f64,
            step_ms_mean: mean,
            step_ms_p95: p95,
            panicked: 0,
            trials: summaries,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Run `cfg.trials` trials of `algo` with seeds `cfg.seed + i`. A trial
/// that panics is recorded as diverged.
pub fn run_campaign(
    cfg: &ExperimentConfig,
    algo: Algorithm,
) -> Result<(CampaignResult, Vec<TrialResult>)> {
    let scenario = cfg.scenario()?;
    let starts: Vec<(u64, Vector)> = (0..cfg.trials as u64)
        .map(|i| {
            let seed = cfg.seed + i;
            scenario.initial_state(seed).map(|x| (seed, x))
        })
        .collect::<Result<_>>()?;
    let run = |(seed, x0): &(u64, Vector)| match catch_unwind(AssertUnwindSafe(|| {
        run_trial(&scenario.setup, x0, *seed, algo, &cfg.mpc)
    })) {
        Ok(t) => (t, false),
        Err(_) => {
            log::error!("trial with seed {seed} panicked");
            (
                TrialResult {
                    seed: *seed,
                    algorithm: algo,
                    outcome: Outcome::Diverged,
                    steps: 0,
                    final_x: x0.as_slice().to_vec(),
                    final_h: None,
                    final_barrier: None,
                    records: Vec::new(),
                },
                true,
            )
        }
    };
    let done: Vec<(TrialResult, bool)> =
        pool(cfg.threads)?.install(|| starts.par_iter().map(run).collect());
    let panicked = done.iter().filter(|(_, p)| *p).count();
    let trials: Vec<TrialResult> = done.into_iter().map(|(t, _)| t).collect();
    let mut result = CampaignResult::from_trials(cfg, &scenario, algo, &trials);
    result.panicked = panicked;
    Ok((result, trials))
}

/// Generic smooth loss for gradient checks: squared distance of every
/// state and control from fixed references.
pub fn check_loss(p: &OCProblem, x_ref: &Vector) -> QuadraticLoss {
    QuadraticLoss::constant(
        Vector::from_element(p.n_x(), 1.0),
        Vector::from_element(p.n_u(), 1.0),
        x_ref.clone(),
        Vector::zeros(p.n_u()),
        p.horizon,
    )
}

/// The gradient-check problem of a scenario: its nominal trajectory
/// optimization from the trial-0 start, tightly solved.
pub struct CheckProblem {
    pub problem: OCProblem,
    pub warm: Vec<Vector>,
    pub solution: Solution,
}

pub fn check_problem(
    cfg: &ExperimentConfig,
    horizon: Option<usize>,
    start: Option<&[f64]>,
    embed: bool,
    solver: &SolverOptions,
) -> Result<CheckProblem> {
    let scenario = cfg.scenario()?;
    let horizon = horizon.unwrap_or(cfg.task.horizon);
    let x0 = match start {
        Some(s) => Vector::from_row_slice(s),
        None => scenario.initial_state(cfg.seed)?,
    };
    let problem = scenario.nominal_problem(&x0, horizon, embed)?;
    let warm = scenario.default_controls(horizon);
    let solution = solve(&problem, &warm, solver)?;
    Ok(CheckProblem {
        problem,
        warm,
        solution,
    })
}

/// Relative error `|a - b| / max(|b|, floor)`.
pub fn rel_error(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        CheckOutcome {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub system: String,
    pub horizon: usize,
    pub n_theta: usize,
    pub embed_barrier: bool,
    pub kkt_residual: f64,
    pub solver_converged: bool,
    pub gradients: Vec<(Route, Vec<f64>)>,
    pub checks: Vec<CheckOutcome>,
    pub sweep: Vec<JacobianErrorRow>,
    pub passed: bool,
}

/// Route agreement on the nominal problem plus the Jacobian-error sweep.
pub fn gradcheck(cfg: &ExperimentConfig) -> Result<GradcheckReport> {
    let g = &cfg.gradcheck;
    let cp = check_problem(
        cfg,
        g.horizon,
        g.start.as_deref(),
        g.embed_barrier,
        &g.solver,
    )?;
    let p = &cp.problem;
    let loss = check_loss(p, &Vector::zeros(p.n_x()));
    let opts = DocOptions {
        fd: g.fd.clone(),
        ..Default::default()
    };
    let mut grads = Vec::new();
    for route in Route::ALL {
        grads.push((
            route,
            hypergradient(p, &cp.solution, &loss, route, &opts)?.grad,
        ));
    }
    let get = |r: Route| {
        grads
            .iter()
            .find(|(q, _)| *q == r)
            .map(|(_, v)| v.clone())
            .expect("route computed")
    };
    let mut full = get(Route::DocFull);
    if g.inject_fault {
        full[0] += 1.0 + full[0].abs();
    }
    let mut checks = vec![
        CheckOutcome::new(
            "solver_converged",
            if cp.solution.converged { 0.0 } else { 1.0 },
            0.0,
        ),
        CheckOutcome::new(
            "doc_full_vs_fd",
            rel_error(&full, &get(Route::FiniteDifference)),
            g.fd_rel_tol,
        ),
        CheckOutcome::new(
            "doc_full_vs_pdp",
            rel_error(&full, &get(Route::Pdp)),
            g.pdp_rel_tol,
        ),
    ];
    if p.model.is_linear() {
        checks.push(CheckOutcome::new(
            "gauss_newton_vs_full_linear",
            rel_error(&get(Route::DocGaussNewton), &full),
            g.gn_rel_tol,
        ));
    }
    let sweep = if g.budgets.is_empty() {
        Vec::new()
    } else {
        let sweep_solver = SolverOptions {
            tol: 0.0,
            relative: false,
            ..g.solver.clone()
        };
        jacobian_error_experiment(p, &cp.warm, &g.budgets, &sweep_solver, &g.fd)?
    };
    let passed = checks.iter().all(|c| c.passed);
    Ok(GradcheckReport {
        system: cfg.system.name().into(),
        horizon: p.horizon,
        n_theta: p.n_theta(),
        embed_barrier: g.embed_barrier,
        kkt_residual: cp.solution.kkt_residual,
        solver_converged: cp.solution.converged,
        gradients: grads
            .into_iter()
            .map(|(r, v)| (r, v.as_slice().to_vec()))
            .collect(),
        checks,
        sweep,
        passed,
    })
}

/// Jacobian-error sweep on the nominal problem of `cfg`.
pub fn grad_precision_campaign(cfg: &ExperimentConfig) -> Result<Vec<JacobianErrorRow>> {
    let g = &cfg.gradcheck;
    let scenario = cfg.scenario()?;
    let horizon = g.horizon.unwrap_or(cfg.task.horizon);
    let x0 = match &g.start {
        Some(s) => Vector::from_row_slice(s),
        None => scenario.initial_state(cfg.seed)?,
    };
    let p = scenario.nominal_problem(&x0, horizon, g.embed_barrier)?;
    let sweep_solver = SolverOptions {
        tol: 0.0,
        relative: false,
        ..g.solver.clone()
    };
    jacobian_error_experiment(
        &p,
        &scenario.default_controls(horizon),
        &g.budgets,
        &sweep_solver,
        &g.fd,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    /// A route name, or `ddp_iteration` for one bare solver iteration.
    pub name: String,
    pub reps: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

impl TimingRow {
    pub const CSV_HEADER: &'static str = "name,reps,mean_ms,std_ms";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{}",
            self.name, self.reps, self.mean_ms, self.std_ms
        )
    }
}

fn time_reps(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<(f64, f64)> {
    f()?;
    let mut ms = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean = ms.iter().sum::<f64>() / reps as f64;
    let var = ms.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (reps.max(2) - 1) as f64;
    Ok((mean, var.sqrt()))
}

/// Mean and standard deviation of wall time per hypergradient call for
/// each route, plus one bare DDP iteration. Sorted by mean time.
pub fn timing_campaign(cfg: &ExperimentConfig) -> Result<Vec<TimingRow>> {
    let b = &cfg.bench;
    if b.reps < 10 {
        return Err(Error::Config("bench.reps must be >= 10".into()));
    }
    let cp = check_problem(cfg, b.horizon, None, b.embed_barrier, &b.solver)?;
    let p = &cp.problem;
    let loss = check_loss(p, &Vector::zeros(p.n_x()));
    let opts = DocOptions::default();
    let mut rows = Vec::new();
    for &route in &b.routes {
        let (mean, std) = time_reps(b.reps, || {
            hypergradient(p, &cp.solution, &loss, route, &opts).map(|_| ())
        })?;
        rows.push(TimingRow {
            name: route.name().into(),
            reps: b.reps,
            mean_ms: mean,
            std_ms: std,
        });
    }
    let one = SolverOptions {
        budget: 1,
        ..b.solver.clone()
    };
    let (mean, std) = time_reps(b.reps, || solve(p, &cp.solution.traj.us, &one).map(|_| ()))?;
    rows.push(TimingRow {
        name: "ddp_iteration".into(),
        reps: b.reps,
        mean_ms: mean,
        std_ms: std,
    });
    rows.sort_by(|a, b| a.mean_ms.total_cmp(&b.mean_ms));
    Ok(rows)
}
