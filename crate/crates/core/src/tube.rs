//! Two-layer tube MPC: a nominal planner on the disturbance-free model and
//! an ancillary tracker on the true state, with optional online adaptation
//! of both layers' parameters by hypergradient descent (DT-MPC).

use std::sync::Arc;
use std::time::Instant;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::barrier::{aggregate_value, BarrierKind, ParamRef, SafeSystem};
use crate::bundle::HessianMode;
use crate::cost::{Features, ParamLayout, TrackingCost};
use crate::ddp::{solve, Solution, SolverOptions};
use crate::doc::{doc_gradient, DocOptions, LossGrad, LossSpec, Route};
use crate::dynamics::disturbance::DisturbanceConfig;
use crate::dynamics::safety::SafetyFunction;
use crate::dynamics::{ControlBounds, DynamicsModel, Vector};
use crate::error::{Error, Result};
use crate::problem::{InitialState, OCProblem, Trajectory};

/// Parameter blocks a controller exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Q,
    R,
    Qf,
    QB,
    Gamma,
    Alpha,
}

impl ParamKind {
    /// Projection box.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ParamKind::Q | ParamKind::Qf => (0.0, f64::INFINITY),
            ParamKind::R => (1e-4, f64::INFINITY),
            ParamKind::QB => (0.0, 1.0),
            ParamKind::Gamma => (-1.0, 1.0),
            ParamKind::Alpha => (0.0, f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub kind: ParamKind,
    pub start: usize,
    pub len: usize,
    pub frozen: bool,
}

/// Flat parameter vector `(q, r, [qf], q_b, gamma, alpha)` with per-block
/// projection and freezing.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    pub theta: Vector,
    pub blocks: Vec<ParamBlock>,
}

impl ControllerParams {
    pub fn new(
        q: &[f64],
        r: &[f64],
        qf: Option<&[f64]>,
        q_b: f64,
        gamma: f64,
        alpha: f64,
        adapt: &[ParamKind],
    ) -> Self {
        let mut theta = Vec::new();
        let mut blocks = Vec::new();
        let mut push = |kind: ParamKind, vals: &[f64]| {
            blocks.push(ParamBlock {
                kind,
                start: theta.len(),
                len: vals.len(),
                frozen: !adapt.contains(&kind),
            });
            theta.extend_from_slice(vals);
        };
        push(ParamKind::Q, q);
        push(ParamKind::R, r);
        if let Some(qf) = qf {
            push(ParamKind::Qf, qf);
        }
        push(ParamKind::QB, &[q_b]);
        push(ParamKind::Gamma, &[gamma]);
        push(ParamKind::Alpha, &[alpha]);
        ControllerParams {
            theta: Vector::from_vec(theta),
            blocks,
        }
    }

    pub fn block(&self, kind: ParamKind) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.kind == kind)
    }

    pub fn get(&self, kind: ParamKind) -> &[f64] {
        let b = self.block(kind).expect("block present");
        &self.theta.as_slice()[b.start..b.start + b.len]
    }

    fn start(&self, kind: ParamKind) -> usize {
        self.block(kind).expect("block present").start
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            q: self.start(ParamKind::Q),
            r: self.start(ParamKind::R),
            qf: self.block(ParamKind::Qf).map(|b| b.start),
            q_b: ParamRef::Theta(self.start(ParamKind::QB)),
        }
    }

    pub fn gamma_ref(&self) -> ParamRef {
        ParamRef::Theta(self.start(ParamKind::Gamma))
    }

    pub fn alpha_ref(&self) -> ParamRef {
        ParamRef::Theta(self.start(ParamKind::Alpha))
    }

    /// Per-entry adaptation flags.
    pub fn adaptable(&self) -> Vec<bool> {
        let mut m = vec![false; self.theta.len()];
        for b in &self.blocks {
            for i in b.start..b.start + b.len {
                m[i] = !b.frozen;
            }
        }
        m
    }

    pub fn any_adaptable(&self) -> bool {
        self.blocks.iter().any(|b| !b.frozen)
    }

    pub fn project(&mut self) {
        for b in &self.blocks {
            let (lo, hi) = b.kind.bounds();
            for i in b.start..b.start + b.len {
                self.theta[i] = self.theta[i].clamp(lo, hi);
            }
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.blocks.iter().all(|b| {
            let (lo, hi) = b.kind.bounds();
            (b.start..b.start + b.len).all(|i| self.theta[i] >= lo && self.theta[i] <= hi)
        })
    }
}

/// Gradient step with optional Nesterov momentum, then projection.
/// Frozen entries and entries with a non-finite gradient are left alone.
pub fn adapt_parameters(
    params: &mut ControllerParams,
    velocity: &mut Vector,
    grad: &Vector,
    eta: f64,
    momentum: f64,
    nesterov: bool,
) {
    let mask = params.adaptable();
    for i in 0..grad.len() {
        if !mask[i] || !grad[i].is_finite() {
            continue;
        }
        let step = if nesterov {
            velocity[i] = momentum * velocity[i] + grad[i];
            grad[i] + momentum * velocity[i]
        } else {
            grad[i]
        };
        params.theta[i] -= eta * step;
    }
    params.project();
}

/// Which plant coordinates the tracking loss compares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    FullState,
    /// Only the listed plant coordinates (e.g. planar position).
    PositionOnly(Vec<usize>),
}

impl LossVariant {
    fn dims(&self, n_plant: usize) -> Vec<usize> {
        match self {
            LossVariant::FullState => (0..n_plant).collect(),
            LossVariant::PositionOnly(d) => d.clone(),
        }
    }
}

/// Loss value, its gradient on the ancillary trajectory, and its direct
/// gradient on the nominal plant states.
#[derive(Debug, Clone)]
pub struct TubeLoss {
    pub value: f64,
    /// The barrier part `sum_k b_k^2`.
    pub barrier: f64,
    pub grad_ancillary: LossGrad,
    pub grad_nominal_x: Vec<Vector>,
}

/// `sum_k |x*_k - xbar_k|^2 + sum_k (b*_k)^2` over augmented trajectories
/// whose last state entry is the barrier state.
pub fn dt_mpc_loss(
    tau_star: &Trajectory,
    tau_bar: &Trajectory,
    variant: &LossVariant,
) -> Result<TubeLoss> {
    if tau_star.horizon() != tau_bar.horizon() {
        return Err(Error::HorizonMismatch {
            left: tau_star.horizon(),
            right: tau_bar.horizon(),
        });
    }
    let na = tau_star.xs[0].len();
    let n = na - 1;
    let nu = tau_star.us[0].len();
    let dims = variant.dims(n);
    let mut grad_ancillary = LossGrad::zeros(na, nu, tau_star.horizon());
    let mut grad_nominal_x = vec![Vector::zeros(n); tau_star.horizon() + 1];
    let (mut value, mut barrier) = (0.0, 0.0);
    for k in 0..=tau_star.horizon() {
        let (xs, xb) = (&tau_star.xs[k], &tau_bar.xs[k]);
        for &i in &dims {
            let e = xs[i] - xb[i];
            value += e * e;
            grad_ancillary.gx[k][i] = 2.0 * e;
            grad_nominal_x[k][i] = -2.0 * e;
        }
        let b = xs[n];
        barrier += b * b;
        grad_ancillary.gx[k][n] = 2.0 * b;
    }
    Ok(TubeLoss {
        value: value + barrier,
        barrier,
        grad_ancillary,
        grad_nominal_x,
    })
}

/// The tube loss against a fixed nominal trajectory, as a [`LossSpec`].
pub struct TrackingLoss {
    pub nominal: Trajectory,
    pub variant: LossVariant,
}

impl LossSpec for TrackingLoss {
    fn value(&self, traj: &Trajectory) -> Result<f64> {
        Ok(dt_mpc_loss(traj, &self.nominal, &self.variant)?.value)
    }
    fn grad(&self, traj: &Trajectory) -> Result<LossGrad> {
        Ok(dt_mpc_loss(traj, &self.nominal, &self.variant)?.grad_ancillary)
    }
}

/// One MPC layer: safety-embedded model plus its tracking cost structure.
#[derive(Clone)]
pub struct Layer {
    pub model: Arc<SafeSystem>,
    pub features: Features,
    pub horizon: usize,
    pub bounds: Option<ControlBounds>,
    pub layout: ParamLayout,
}

impl Layer {
    pub fn new(
        plant: Arc<dyn DynamicsModel>,
        safety: Arc<dyn SafetyFunction>,
        kind: BarrierKind,
        params: &ControllerParams,
        features: Features,
        horizon: usize,
        bounds: Option<ControlBounds>,
    ) -> Self {
        let model = Arc::new(SafeSystem::new(
            plant,
            safety,
            kind,
            params.gamma_ref(),
            params.alpha_ref(),
        ));
        Layer {
            model,
            features,
            horizon,
            bounds,
            layout: params.layout(),
        }
    }

    pub fn n_plant(&self) -> usize {
        self.model.plant.state_dim()
    }

    /// Problem from plant state `x` with references over the horizon.
    pub fn problem(
        &self,
        x: &Vector,
        theta: &Vector,
        s_ref: Vec<Vector>,
        u_ref: Vec<Vector>,
    ) -> Result<(OCProblem, Arc<TrackingCost>)> {
        let cost = Arc::new(TrackingCost {
            features: self.features.clone(),
            n_u: self.model.control_dim(),
            b_index: Some(self.n_plant()),
            s_ref,
            u_ref,
            layout: self.layout,
        });
        let p = OCProblem {
            model: self.model.clone(),
            cost: cost.clone(),
            init: InitialState::Fixed(self.model.embed(x, theta)?),
            theta: theta.clone(),
            horizon: self.horizon,
            bounds: self.bounds.clone(),
        };
        Ok((p, cost))
    }
}

/// Success region on a task-space feature.
#[derive(Debug, Clone)]
pub struct Goal {
    pub features: Features,
    pub target: Vector,
    pub radius: f64,
}

impl Goal {
    pub fn reached(&self, x: &Vector) -> bool {
        (self.features.value(x) - &self.target).norm() <= self.radius
    }
}

/// Everything one trial needs besides its seed and initial state.
#[derive(Clone)]
pub struct TubeSetup {
    pub plant: Arc<dyn DynamicsModel>,
    pub safety: Arc<dyn SafetyFunction>,
    pub nominal: Layer,
    pub ancillary: Layer,
    pub nominal_params: ControllerParams,
    pub ancillary_params: ControllerParams,
    /// Feature target of the nominal cost.
    pub nominal_target: Vector,
    /// Control reference of the nominal cost.
    pub nominal_u_ref: Vector,
    pub disturbance: DisturbanceConfig,
    pub loss: LossVariant,
    pub goal: Goal,
    /// Failure when any listed coordinate leaves `[lo, hi]`.
    pub state_box: Option<(Vec<usize>, f64, f64)>,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    NtMpc,
    DtMpc,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::NtMpc => "nt_mpc",
            Algorithm::DtMpc => "dt_mpc",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "nt_mpc" => Ok(Algorithm::NtMpc),
            "dt_mpc" => Ok(Algorithm::DtMpc),
            _ => Err(Error::Config(format!("unknown algorithm '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcOptions {
    pub eta: f64,
    pub momentum: f64,
    pub nesterov: bool,
    /// Solver iterations per layer when adapting.
    pub budget_dt: usize,
    /// Solver iterations per layer without adaptation.
    pub budget_nt: usize,
    pub tol: f64,
    /// `doc_full` or `doc_gauss_newton`.
    pub route: Route,
}

impl Default for MpcOptions {
    fn default() -> Self {
        MpcOptions {
            eta: 1e-2,
            momentum: 0.9,
            nesterov: false,
            budget_dt: 9,
            budget_nt: 10,
            tol: 1e-3,
            route: Route::DocGaussNewton,
        }
    }
}

impl MpcOptions {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.route, Route::DocFull | Route::DocGaussNewton) {
            return Err(Error::Config(format!(
                "mpc route must be a DOC route, got {}",
                self.route.name()
            )));
        }
        if self.budget_dt == 0 || self.budget_nt == 0 {
            return Err(Error::Config("mpc budgets must be >= 1".into()));
        }
        if !(self.eta >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("need eta >= 0 and momentum in [0, 1)".into()));
        }
        Ok(())
    }

    fn hessian_mode(&self) -> HessianMode {
        if self.route == Route::DocFull {
            HessianMode::FullNewton
        } else {
            HessianMode::GaussNewton
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    /// Collision or leaving the allowed region.
    Violation,
    /// Solver or model failure (non-finite state, singular attitude, ...).
    Diverged,
    Timeout,
}

impl Outcome {
    /// Counted as a safety violation in campaign statistics.
    pub fn is_violation(&self) -> bool {
        matches!(self, Outcome::Violation | Outcome::Diverged)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub converged: bool,
    pub cost: f64,
}

impl From<&Solution> for SolveStats {
    fn from(s: &Solution) -> Self {
        SolveStats {
            iterations: s.iterations,
            converged: s.converged,
            cost: s.cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub u_applied: Vec<f64>,
    pub x_true: Vec<f64>,
    pub x_nominal: Vec<f64>,
    pub loss: f64,
    /// Loss without the barrier term.
    pub tracking_loss: f64,
    pub grad_norm_nominal: Option<f64>,
    pub grad_norm_ancillary: Option<f64>,
    pub nominal: SolveStats,
    pub ancillary: SolveStats,
    /// Safety function at `x_true`; `None` when unconstrained.
    pub h_true: Option<f64>,
    /// Ancillary barrier at `x_true`; `None` outside the barrier's domain.
    pub barrier_true: Option<f64>,
    pub theta_nominal: Vec<f64>,
    pub theta_ancillary: Vec<f64>,
    pub step_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub outcome: Outcome,
    pub steps: usize,
    pub final_x: Vec<f64>,
    pub final_h: Option<f64>,
    pub final_barrier: Option<f64>,
    pub records: Vec<StepRecord>,
}

fn shifted(us: &[Vector]) -> Vec<Vector> {
    let mut out: Vec<Vector> = us[1..].to_vec();
    out.push(us.last().expect("nonempty").clone());
    out
}

/// Solve from the first warm start whose rollout is admissible.
fn solve_first(p: &OCProblem, warm: &[Vec<Vector>], opts: &SolverOptions) -> Result<Solution> {
    let mut last = Error::NonFiniteState { step: 0 };
    for us in warm {
        match solve(p, us, opts) {
            Ok(s) => return Ok(s),
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn barrier_at(setup: &TubeSetup, params: &ControllerParams, x: &Vector) -> Option<f64> {
    let alpha = params.get(ParamKind::Alpha)[0];
    aggregate_value(&*setup.safety, setup.ancillary.model.kind, alpha, x).ok()
}

fn classify(setup: &TubeSetup, x: &Vector) -> Option<Outcome> {
    if x.iter().any(|v| !v.is_finite()) {
        return Some(Outcome::Diverged);
    }
    if setup.safety.h(x) <= 0.0 {
        return Some(Outcome::Violation);
    }
    if let Some((idx, lo, hi)) = &setup.state_box {
        if idx.iter().any(|&i| x[i] < *lo || x[i] > *hi) {
            return Some(Outcome::Violation);
        }
    }
    setup.goal.reached(x).then_some(Outcome::Success)
}

/// Gradients of the tube loss for the nominal and ancillary parameters.
/// The nominal gradient is `None` when every nominal parameter is frozen.
pub fn tube_gradients(
    setup: &TubeSetup,
    nominal: (&OCProblem, &Solution),
    ancillary: (&OCProblem, &Solution, &TrackingCost),
    loss: &TubeLoss,
    nominal_params: &ControllerParams,
    opts: &MpcOptions,
) -> Result<(Option<Vector>, Vector)> {
    let mode = opts.hessian_mode();
    let need_nominal = nominal_params.any_adaptable();
    let doc = DocOptions {
        store_delta_z: need_nominal,
        ..Default::default()
    };
    let (ap, asol, acost) = ancillary;
    let (g_anc, dz) = doc_gradient(ap, asol, &loss.grad_ancillary, mode, &doc)?;
    if !need_nominal {
        return Ok((None, g_anc));
    }
    let dz = dz.expect("stored");
    let (np, nsol) = nominal;
    let n = setup.ancillary.n_plant();
    let horizon = ap.horizon;
    let mut lg = LossGrad::zeros(n + 1, ap.n_u(), horizon);
    for k in 0..=horizon {
        let du = (k < horizon).then(|| &dz.du[k]);
        let (ds, dub) = acost.reference_sensitivity(k, &asol.traj.xs[k], &dz.dx[k], du, &ap.theta);
        let gx = &loss.grad_nominal_x[k] + ds;
        lg.gx[k].rows_mut(0, n).copy_from(&gx);
        if k < horizon {
            lg.gu[k] = dub;
        }
    }
    let (g_nom, _) = doc_gradient(np, nsol, &lg, mode, &DocOptions::default())?;
    Ok((Some(g_nom), g_anc))
}

/// Run one closed-loop trial. `Algorithm::NtMpc` skips adaptation and
/// gives both layers the full budget.
pub fn run_trial(
    setup: &TubeSetup,
    x0: &Vector,
    seed: u64,
    algo: Algorithm,
    opts: &MpcOptions,
) -> TrialResult {
    let adapt = algo == Algorithm::DtMpc;
    let budget = if adapt {
        opts.budget_dt
    } else {
        opts.budget_nt
    };
    let solver = SolverOptions {
        budget,
        tol: opts.tol,
        relative: false,
        ..Default::default()
    };
    let horizon = setup.nominal.horizon;
    let n = setup.ancillary.n_plant();
    let mut nom_p = setup.nominal_params.clone();
    let mut anc_p = setup.ancillary_params.clone();
    let mut v_nom = Vector::zeros(nom_p.theta.len());
    let mut v_anc = Vector::zeros(anc_p.theta.len());
    let u_default = vec![setup.nominal_u_ref.clone(); horizon];
    let mut nom_warm = u_default.clone();
    let mut anc_prev: Option<Vec<Vector>> = None;
    let mut x = x0.clone();
    let mut xbar = x0.clone();
    let mut records = Vec::new();
    let mut outcome = classify(setup, &x).filter(|o| *o != Outcome::Success);

    let mut t = 0;
    while outcome.is_none() && t < setup.steps {
        let started = Instant::now();
        let step = (|| -> Result<(StepRecord, Vector, Vector, Vec<Vector>, Vec<Vector>)> {
            let targets = vec![setup.nominal_target.clone(); horizon + 1];
            let (np, _) = setup.nominal.problem(
                &xbar,
                &nom_p.theta,
                targets,
                vec![setup.nominal_u_ref.clone(); horizon],
            )?;
            let nsol = solve_first(&np, &[nom_warm.clone(), u_default.clone()], &solver)?;

            let s_ref: Vec<Vector> = nsol
                .traj
                .xs
                .iter()
                .map(|v| v.rows(0, n).into_owned())
                .collect();
            let (ap, acost) =
                setup
                    .ancillary
                    .problem(&x, &anc_p.theta, s_ref, nsol.traj.us.clone())?;
            let mut warm: Vec<Vec<Vector>> = anc_prev.iter().cloned().collect();
            warm.push(nsol.traj.us.clone());
            warm.push(u_default.clone());
            let asol = solve_first(&ap, &warm, &solver)?;

            let loss = dt_mpc_loss(&asol.traj, &nsol.traj, &setup.loss)?;
            let (mut gn_norm, mut ga_norm) = (None, None);
            if adapt && (nsol.converged || asol.converged) {
                match tube_gradients(
                    setup,
                    (&np, &nsol),
                    (&ap, &asol, &acost),
                    &loss,
                    &nom_p,
                    opts,
                ) {
                    Ok((g_nom, g_anc)) => {
                        ga_norm = Some(g_anc.norm());
                        adapt_parameters(
                            &mut anc_p,
                            &mut v_anc,
                            &g_anc,
                            opts.eta,
                            opts.momentum,
                            opts.nesterov,
                        );
                        if let Some(g) = g_nom {
                            gn_norm = Some(g.norm());
                            adapt_parameters(
                                &mut nom_p,
                                &mut v_nom,
                                &g,
                                opts.eta,
                                opts.momentum,
                                opts.nesterov,
                            );
                        }
                    }
                    Err(e) => debug!("step {t}: gradient skipped: {e}"),
                }
            }

            let u = asol.traj.us[0].clone();
            let ubar = nsol.traj.us[0].clone();
            let empty = Vector::zeros(0);
            let w = setup.disturbance.sample(seed, t as u64);
            let x_next = setup.plant.step(&x, &u, &empty)? + w;
            let xbar_next = setup.plant.step(&xbar, &ubar, &empty)?;
            let rec = StepRecord {
                t,
                u_applied: u.as_slice().to_vec(),
                x_true: x.as_slice().to_vec(),
                x_nominal: xbar.as_slice().to_vec(),
                loss: loss.value,
                tracking_loss: loss.value - loss.barrier,
                grad_norm_nominal: gn_norm,
                grad_norm_ancillary: ga_norm,
                nominal: (&nsol).into(),
                ancillary: (&asol).into(),
                h_true: finite(setup.safety.h(&x)),
                barrier_true: barrier_at(setup, &anc_p, &x),
                theta_nominal: nom_p.theta.as_slice().to_vec(),
                theta_ancillary: anc_p.theta.as_slice().to_vec(),
                step_ms: 0.0,
            };
            Ok((
                rec,
                x_next,
                xbar_next,
                shifted(&nsol.traj.us),
                shifted(&asol.traj.us),
            ))
        })();
        match step {
            Ok((mut rec, x_next, xbar_next, nw, aw)) => {
                rec.step_ms = started.elapsed().as_secs_f64() * 1e3;
                records.push(rec);
                x = x_next;
                xbar = xbar_next;
                nom_warm = nw;
                anc_prev = Some(aw);
                outcome = classify(setup, &x);
            }
            Err(e) => {
                warn!("seed {seed} step {t}: trial aborted: {e}");
                outcome = Some(Outcome::Diverged);
            }
        }
        t += 1;
    }

    TrialResult {
        seed,
        algorithm: algo,
        outcome: outcome.unwrap_or(Outcome::Timeout),
        steps: records.len(),
        final_h: finite(setup.safety.h(&x)),
        final_barrier: barrier_at(setup, &anc_p, &x),
        final_x: x.as_slice().to_vec(),
        records,
    }
}

pub fn run_dt_mpc(setup: &TubeSetup, x0: &Vector, seed: u64, opts: &MpcOptions) -> TrialResult {
    run_trial(setup, x0, seed, Algorithm::DtMpc, opts)
}

pub fn run_nt_mpc(setup: &TubeSetup, x0: &Vector, seed: u64, opts: &MpcOptions) -> TrialResult {
    run_trial(setup, x0, seed, Algorithm::NtMpc, opts)
}
