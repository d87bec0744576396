//! Hypergradients of an upper-level loss through a DDP solution.
//!
//! Four routes: DOC with a full-Newton or Gauss-Newton Lagrangian Hessian
//! (one backward sweep on the loss gradient, then a forward sweep that
//! accumulates `dL/dtheta`), the PDP matrix recursion for the whole
//! solution Jacobian, and central finite differences of re-solved problems.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::bundle::{compute_derivatives, DerivativeBundle, HessianMode};
use crate::ddp::{factor_escalating, select, solve, Solution, SolverOptions};
use crate::dynamics::{Matrix, Vector};
use crate::error::{Error, Result};
use crate::problem::{OCProblem, Trajectory};

/// Per-step loss gradients; the multiplier components are always zero.
#[derive(Debug, Clone)]
pub struct LossGrad {
    /// `N + 1` entries.
    pub gx: Vec<Vector>,
    /// `N` entries.
    pub gu: Vec<Vector>,
}

impl LossGrad {
    pub fn zeros(n_x: usize, n_u: usize, horizon: usize) -> Self {
        LossGrad {
            gx: vec![Vector::zeros(n_x); horizon + 1],
            gu: vec![Vector::zeros(n_u); horizon],
        }
    }

    /// Stacked in [`Trajectory::stacked`] order.
    pub fn stacked(&self) -> Vector {
        Trajectory {
            xs: self.gx.clone(),
            us: self.gu.clone(),
        }
        .stacked()
    }
}

/// Upper-level loss `L(tau)` on a lower-level trajectory.
pub trait LossSpec: Send + Sync {
    fn value(&self, traj: &Trajectory) -> Result<f64>;
    fn grad(&self, traj: &Trajectory) -> Result<LossGrad>;
}

/// `sum_k |W_x (x_k - xref_k)|^2 + sum_k |W_u (u_k - uref_k)|^2`, diagonal weights.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    pub wx: Vector,
    pub wu: Vector,
    pub x_ref: Vec<Vector>,
    pub u_ref: Vec<Vector>,
}

impl QuadraticLoss {
    pub fn constant(wx: Vector, wu: Vector, x_ref: Vector, u_ref: Vector, horizon: usize) -> Self {
        QuadraticLoss {
            wx,
            wu,
            x_ref: vec![x_ref; horizon + 1],
            u_ref: vec![u_ref; horizon],
        }
    }
}

impl LossSpec for QuadraticLoss {
    fn value(&self, traj: &Trajectory) -> Result<f64> {
        check_horizon(traj, self.u_ref.len())?;
        let mut v = 0.0;
        for (x, r) in traj.xs.iter().zip(&self.x_ref) {
            let e = x - r;
            v += e.dot(&self.wx.component_mul(&e));
        }
        for (u, r) in traj.us.iter().zip(&self.u_ref) {
            let e = u - r;
            v += e.dot(&self.wu.component_mul(&e));
        }
        Ok(v)
    }

    fn grad(&self, traj: &Trajectory) -> Result<LossGrad> {
        check_horizon(traj, self.u_ref.len())?;
        Ok(LossGrad {
            gx: traj
                .xs
                .iter()
                .zip(&self.x_ref)
                .map(|(x, r)| 2.0 * self.wx.component_mul(&(x - r)))
                .collect(),
            gu: traj
                .us
                .iter()
                .zip(&self.u_ref)
                .map(|(u, r)| 2.0 * self.wu.component_mul(&(u - r)))
                .collect(),
        })
    }
}

fn check_horizon(traj: &Trajectory, n: usize) -> Result<()> {
    if traj.horizon() != n {
        return Err(Error::HorizonMismatch {
            left: traj.horizon(),
            right: n,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    DocFull,
    DocGaussNewton,
    Pdp,
    FiniteDifference,
}

impl Route {
    pub const ALL: [Route; 4] = [
        Route::DocFull,
        Route::DocGaussNewton,
        Route::Pdp,
        Route::FiniteDifference,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Route::DocFull => "doc_full",
            Route::DocGaussNewton => "doc_gauss_newton",
            Route::Pdp => "pdp",
            Route::FiniteDifference => "finite_difference",
        }
    }
}

impl std::str::FromStr for Route {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Route::ALL
            .into_iter()
            .find(|r| r.name() == s || (s == "fd" && *r == Route::FiniteDifference))
            .ok_or_else(|| Error::Config(format!("unknown route '{s}'")))
    }
}

/// Primal-dual variation `delta z = (delta x, delta u, delta lambda)`.
#[derive(Debug, Clone)]
pub struct DeltaZ {
    pub dx: Vec<Vector>,
    pub du: Vec<Vector>,
    pub dlam: Vec<Vector>,
}

#[derive(Debug, Clone)]
pub struct Hypergradient {
    pub grad: Vector,
    pub route: Route,
    pub delta_z: Option<DeltaZ>,
    /// Stationarity residual of the solution the gradient was taken at.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdOptions {
    /// Step `h_i = rel_step * (1 + |theta_i|)`.
    pub rel_step: f64,
    pub solver: SolverOptions,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            rel_step: 1e-5,
            solver: SolverOptions {
                budget: 200,
                tol: 1e-10,
                relative: true,
                mode: HessianMode::FullNewton,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DocOptions {
    /// Warn when the solution's stationarity residual exceeds this.
    pub stationarity_gate: f64,
    pub store_delta_z: bool,
    pub reg_max: f64,
    pub fd: FdOptions,
}

impl Default for DocOptions {
    fn default() -> Self {
        DocOptions {
            stationarity_gate: 1e-2,
            store_delta_z: false,
            reg_max: 1e10,
            fd: FdOptions::default(),
        }
    }
}

/// Factor `Q_uu` restricted to the free components. Returns the inverse
/// applied to the identity on that subspace.
struct FreeFactor {
    idx: Vec<usize>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl FreeFactor {
    fn new(
        quu: &Matrix,
        active: &[bool],
        reg_start: f64,
        reg_max: f64,
        step: usize,
    ) -> Result<Self> {
        let idx: Vec<usize> = (0..quu.nrows()).filter(|&i| !active[i]).collect();
        if idx.is_empty() {
            return Ok(FreeFactor { idx, chol: None });
        }
        let (chol, _) = factor_escalating(&select(quu, &idx, &idx), reg_start, reg_max)
            .ok_or(Error::NotPositiveDefinite { step, reg: reg_max })?;
        Ok(FreeFactor {
            idx,
            chol: Some(chol),
        })
    }

    /// `-Q_ff^{-1} rhs_f`, scattered back with zero rows on the active set.
    fn neg_solve(&self, rhs: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(rhs.nrows(), rhs.ncols());
        if let Some(chol) = &self.chol {
            let cols: Vec<usize> = (0..rhs.ncols()).collect();
            let sol = chol.solve(&select(rhs, &self.idx, &cols));
            for (r, &i) in self.idx.iter().enumerate() {
                for j in 0..rhs.ncols() {
                    out[(i, j)] = -sol[(r, j)];
                }
            }
        }
        out
    }
}

fn col(v: &Vector) -> Matrix {
    Matrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Value-function quantities of the DOC backward sweep.
#[derive(Debug, Clone)]
pub struct DocBackward {
    /// `N + 1` entries.
    pub vx_tilde: Vec<Vector>,
    /// `N + 1` entries.
    pub vxx: Vec<Matrix>,
    pub k_tilde: Vec<Vector>,
    pub big_k: Vec<Matrix>,
}

/// Backward sweep of DOC: the DDP recursion with the loss gradient in place
/// of the cost gradient.
pub fn doc_backward(
    bundle: &DerivativeBundle,
    lg: &LossGrad,
    reg_start: f64,
    reg_max: f64,
) -> Result<DocBackward> {
    let n = bundle.horizon();
    let mut vx_tilde = vec![Vector::zeros(0); n + 1];
    let mut vxx = vec![Matrix::zeros(0, 0); n + 1];
    let mut k_tilde = vec![Vector::zeros(0); n];
    let mut big_k = vec![Matrix::zeros(0, 0); n];
    vx_tilde[n] = lg.gx[n].clone();
    vxx[n] = bundle.phi_xx.clone();
    for k in (0..n).rev() {
        let s = &bundle.steps[k];
        let qx = &lg.gx[k] + s.fx.tr_mul(&vx_tilde[k + 1]);
        let qu = &lg.gu[k] + s.fu.tr_mul(&vx_tilde[k + 1]);
        let vfx = &vxx[k + 1] * &s.fx;
        let qxx = &s.lxx + s.fx.tr_mul(&vfx);
        let qux = &s.lux + s.fu.tr_mul(&vfx);
        let quu = &s.luu + s.fu.tr_mul(&(&vxx[k + 1] * &s.fu));
        let quu = (&quu + quu.transpose()) * 0.5;
        let ff = FreeFactor::new(&quu, &bundle.active[k], reg_start, reg_max, k)?;
        let kt = ff.neg_solve(&col(&qu)).column(0).into_owned();
        let kk = ff.neg_solve(&qux);
        let ktq = kk.tr_mul(&quu);
        vx_tilde[k] = &qx + &ktq * &kt + kk.tr_mul(&qu) + qux.tr_mul(&kt);
        let v = &qxx + &ktq * &kk + kk.tr_mul(&qux) + qux.tr_mul(&kk);
        vxx[k] = (&v + v.transpose()) * 0.5;
        k_tilde[k] = kt;
        big_k[k] = kk;
    }
    Ok(DocBackward {
        vx_tilde,
        vxx,
        k_tilde,
        big_k,
    })
}

/// Forward sweep of DOC, accumulating `dL/dtheta` step by step.
pub fn doc_forward(
    bundle: &DerivativeBundle,
    bp: &DocBackward,
    store: bool,
) -> (Vector, Option<DeltaZ>) {
    let n = bundle.horizon();
    let nx = bundle.phi_x.len();
    let mut dx = Vector::zeros(nx);
    let mut dlam = bp.vx_tilde[0].clone();
    let mut grad = bundle.xi_t.tr_mul(&dlam);
    let mut dz = store.then(|| DeltaZ {
        dx: vec![dx.clone()],
        du: Vec::new(),
        dlam: vec![dlam.clone()],
    });
    for k in 0..n {
        let s = &bundle.steps[k];
        let du = &bp.k_tilde[k] + &bp.big_k[k] * &dx;
        grad += s.lxt.tr_mul(&dx) + s.lut.tr_mul(&du);
        dx = &s.fx * &dx + &s.fu * &du;
        dlam = &bp.vx_tilde[k + 1] + &bp.vxx[k + 1] * &dx;
        grad += s.ft.tr_mul(&dlam);
        if let Some(d) = dz.as_mut() {
            d.du.push(du);
            d.dx.push(dx.clone());
            d.dlam.push(dlam.clone());
        }
    }
    grad += bundle.phi_xt.tr_mul(&dx);
    (grad, dz)
}

/// Solution Jacobian `dz*/dtheta` as per-step blocks.
#[derive(Debug, Clone)]
pub struct SolutionJacobian {
    /// `N + 1` blocks of `n_x x n_theta`.
    pub dx: Vec<Matrix>,
    /// `N` blocks of `n_u x n_theta`.
    pub du: Vec<Matrix>,
}

impl SolutionJacobian {
    /// Rows in [`Trajectory::stacked`] order.
    pub fn stacked(&self) -> Matrix {
        let nt = self.dx[0].ncols();
        let rows: usize = self.dx.iter().map(|m| m.nrows()).sum::<usize>()
            + self.du.iter().map(|m| m.nrows()).sum::<usize>();
        let mut out = Matrix::zeros(rows, nt);
        let mut r = 0;
        let mut put = |m: &Matrix| {
            out.view_mut((r, 0), (m.nrows(), nt)).copy_from(m);
            r += m.nrows();
        };
        for k in 0..self.du.len() {
            put(&self.dx[k]);
            put(&self.du[k]);
        }
        put(self.dx.last().expect("nonempty"));
        out
    }

    /// `dL/dtheta = sum_k gx_k^T dx_k + gu_k^T du_k`.
    pub fn contract(&self, lg: &LossGrad) -> Vector {
        let nt = self.dx[0].ncols();
        let mut g = Vector::zeros(nt);
        for (m, v) in self.dx.iter().zip(&lg.gx) {
            g += m.tr_mul(v);
        }
        for (m, v) in self.du.iter().zip(&lg.gu) {
            g += m.tr_mul(v);
        }
        g
    }
}

/// PDP route: backward recursion for `V_xtheta`, forward propagation of the
/// sensitivities of the states and controls.
pub fn pdp_from_bundle(
    bundle: &DerivativeBundle,
    reg_start: f64,
    reg_max: f64,
) -> Result<SolutionJacobian> {
    let n = bundle.horizon();
    let nt = bundle.n_theta();
    let mut vxx = bundle.phi_xx.clone();
    let mut vxt = bundle.phi_xt.clone();
    let mut kx = vec![Matrix::zeros(0, 0); n];
    let mut kt = vec![Matrix::zeros(0, 0); n];
    for k in (0..n).rev() {
        let s = &bundle.steps[k];
        let vfx = &vxx * &s.fx;
        let qxx = &s.lxx + s.fx.tr_mul(&vfx);
        let qux = &s.lux + s.fu.tr_mul(&vfx);
        let quu = &s.luu + s.fu.tr_mul(&(&vxx * &s.fu));
        let quu = (&quu + quu.transpose()) * 0.5;
        let drift = &vxt + &vxx * &s.ft;
        let qxt = &s.lxt + s.fx.tr_mul(&drift);
        let qut = &s.lut + s.fu.tr_mul(&drift);
        let ff = FreeFactor::new(&quu, &bundle.active[k], reg_start, reg_max, k)?;
        let gain_t = ff.neg_solve(&qut);
        let gain_x = ff.neg_solve(&qux);
        let ktq = gain_x.tr_mul(&quu);
        vxt = &qxt + &ktq * &gain_t + gain_x.tr_mul(&qut) + qux.tr_mul(&gain_t);
        let v = &qxx + &ktq * &gain_x + gain_x.tr_mul(&qux) + qux.tr_mul(&gain_x);
        vxx = (&v + v.transpose()) * 0.5;
        kx[k] = gain_x;
        kt[k] = gain_t;
    }
    let mut dx = Vec::with_capacity(n + 1);
    let mut du = Vec::with_capacity(n);
    dx.push(bundle.xi_t.clone());
    for k in 0..n {
        let s = &bundle.steps[k];
        let u = &kt[k] + &kx[k] * &dx[k];
        let next = &s.fx * &dx[k] + &s.fu * &u + &s.ft;
        du.push(u);
        dx.push(next);
    }
    debug_assert!(dx.iter().all(|m| m.ncols() == nt));
    Ok(SolutionJacobian { dx, du })
}

/// PDP Jacobian at a trajectory, with the full or Gauss-Newton bundle.
pub fn pdp_jacobian(
    p: &OCProblem,
    traj: &Trajectory,
    mode: HessianMode,
    reg_start: f64,
) -> Result<SolutionJacobian> {
    let bundle = compute_derivatives(p, traj, mode, true)?;
    pdp_from_bundle(&bundle, reg_start, 1e10)
}

/// Solve `p` tightly from `warm` and evaluate the loss at the optimum.
fn solve_tight(
    p: &OCProblem,
    warm: &[Vector],
    opts: &SolverOptions,
    index: usize,
) -> Result<Solution> {
    let s = solve(p, warm, opts)?;
    if !s.converged {
        return Err(Error::InnerSolveFailed {
            index,
            kkt: s.kkt_residual,
        });
    }
    Ok(s)
}

fn fd_step(theta: &Vector, i: usize, rel: f64) -> f64 {
    rel * (1.0 + theta[i].abs())
}

/// Central differences of `L(tau*(theta))`, re-solving from `warm` at
/// every perturbed parameter.
pub fn fd_hypergradient(
    p: &OCProblem,
    warm: &[Vector],
    loss: &dyn LossSpec,
    opts: &FdOptions,
) -> Result<Vector> {
    let mut g = Vector::zeros(p.n_theta());
    for i in 0..p.n_theta() {
        let h = fd_step(&p.theta, i, opts.rel_step);
        let mut vals = [0.0; 2];
        for (j, sgn) in [1.0, -1.0].into_iter().enumerate() {
            let mut th = p.theta.clone();
            th[i] += sgn * h;
            let s = solve_tight(&p.with_theta(th), warm, &opts.solver, i)?;
            vals[j] = loss.value(&s.traj)?;
        }
        g[i] = (vals[0] - vals[1]) / (2.0 * h);
    }
    Ok(g)
}

/// Central-difference solution Jacobian in [`Trajectory::stacked`] order.
pub fn fd_solution_jacobian(p: &OCProblem, warm: &[Vector], opts: &FdOptions) -> Result<Matrix> {
    let mut cols = Vec::with_capacity(p.n_theta());
    for i in 0..p.n_theta() {
        let h = fd_step(&p.theta, i, opts.rel_step);
        let mut th = p.theta.clone();
        th[i] += h;
        let plus = solve_tight(&p.with_theta(th.clone()), warm, &opts.solver, i)?
            .traj
            .stacked();
        th[i] -= 2.0 * h;
        let minus = solve_tight(&p.with_theta(th), warm, &opts.solver, i)?
            .traj
            .stacked();
        cols.push((plus - minus) / (2.0 * h));
    }
    Ok(Matrix::from_columns(&cols))
}

/// DOC with an explicit loss gradient, for losses that are not a
/// [`LossSpec`] (e.g. gradients pulled back from another problem).
pub fn doc_gradient(
    p: &OCProblem,
    sol: &Solution,
    lg: &LossGrad,
    mode: HessianMode,
    opts: &DocOptions,
) -> Result<(Vector, Option<DeltaZ>)> {
    let bundle = compute_derivatives(p, &sol.traj, mode, true)?;
    let bp = doc_backward(&bundle, lg, sol.reg, opts.reg_max)?;
    Ok(doc_forward(&bundle, &bp, opts.store_delta_z))
}

/// `dL/dtheta` at `sol` along `route`.
pub fn hypergradient(
    p: &OCProblem,
    sol: &Solution,
    loss: &dyn LossSpec,
    route: Route,
    opts: &DocOptions,
) -> Result<Hypergradient> {
    if sol.kkt_residual > opts.stationarity_gate {
        warn!(
            "hypergradient at a non-stationary iterate (kkt = {:.3e})",
            sol.kkt_residual
        );
    }
    let reg = sol.reg;
    let (grad, delta_z) = match route {
        Route::DocFull | Route::DocGaussNewton => {
            let mode = if route == Route::DocFull {
                HessianMode::FullNewton
            } else {
                HessianMode::GaussNewton
            };
            doc_gradient(p, sol, &loss.grad(&sol.traj)?, mode, opts)?
        }
        Route::Pdp => {
            let bundle = compute_derivatives(p, &sol.traj, HessianMode::FullNewton, true)?;
            let jac = pdp_from_bundle(&bundle, reg, opts.reg_max)?;
            (jac.contract(&loss.grad(&sol.traj)?), None)
        }
        Route::FiniteDifference => (fd_hypergradient(p, &sol.traj.us, loss, &opts.fd)?, None),
    };
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteState { step: 0 });
    }
    Ok(Hypergradient {
        grad,
        route,
        delta_z,
        kkt_residual: sol.kkt_residual,
    })
}

/// One row of the Jacobian-error sweep. A Jacobian error is `None` when
/// `Q_uu` could not be factored at that iterate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobianErrorRow {
    pub budget: usize,
    pub iterate_error: f64,
    pub err_doc_full: Option<f64>,
    pub err_gauss_newton: Option<f64>,
    pub err_fd_floor: f64,
}

impl JacobianErrorRow {
    pub const CSV_HEADER: &'static str =
        "budget,iterate_error,err_doc_full,err_gauss_newton,err_fd_floor";

    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.budget,
            self.iterate_error,
            opt(self.err_doc_full),
            opt(self.err_gauss_newton),
            self.err_fd_floor
        )
    }
}

/// Solve with each budget in `budgets` from `warm`, and compare the full and
/// Gauss-Newton solution Jacobians at each iterate against a finite-difference
/// Jacobian at a tightly converged reference. `err_fd_floor` is the distance
/// between finite-difference Jacobians taken with `h` and `2h`.
pub fn jacobian_error_experiment(
    p: &OCProblem,
    warm: &[Vector],
    budgets: &[usize],
    solver: &SolverOptions,
    fd: &FdOptions,
) -> Result<Vec<JacobianErrorRow>> {
    let reference = solve_tight(p, warm, &fd.solver, usize::MAX)?;
    let z_star = reference.traj.stacked();
    let j_fd = fd_solution_jacobian(p, &reference.traj.us, fd)?;
    let coarse = FdOptions {
        rel_step: 2.0 * fd.rel_step,
        ..fd.clone()
    };
    let floor = (fd_solution_jacobian(p, &reference.traj.us, &coarse)? - &j_fd).norm();
    let mut rows = Vec::with_capacity(budgets.len());
    for &b in budgets {
        let opts = SolverOptions {
            budget: b,
            ..solver.clone()
        };
        let s = solve(p, warm, &opts)?;
        let err = |mode| match pdp_jacobian(p, &s.traj, mode, s.reg) {
            Ok(j) => Ok(Some((j.stacked() - &j_fd).norm())),
            Err(Error::NotPositiveDefinite { .. }) => Ok(None),
            Err(e) => Err(e),
        };
        rows.push(JacobianErrorRow {
            budget: b,
            iterate_error: (s.traj.stacked() - &z_star).norm(),
            err_doc_full: err(HessianMode::FullNewton)?,
            err_gauss_newton: err(HessianMode::GaussNewton)?,
            err_fd_floor: floor,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::ParamRef;
    use crate::cost::{Features, ParamLayout, TrackingCost};
    use crate::dynamics::dubins::Dubins;
    use crate::dynamics::{ControlBounds, LinearModel};
    use crate::problem::InitialState;
    use std::sync::Arc;

    /// `min_u x1^2 + theta u^2`, `x1 = x0 + u`, `x0 = 1`.
    fn scalar_problem(theta: f64) -> OCProblem {
        let m = LinearModel::new(Matrix::identity(1, 1), Matrix::identity(1, 1));
        let lay = ParamLayout {
            q: 1,
            r: 0,
            qf: Some(1),
            q_b: ParamRef::Fixed(0.0),
        };
        // theta = (r, q); the running state term is constant since x0 is fixed
        let cost = TrackingCost::constant(
            Features::Identity(1),
            1,
            None,
            Vector::zeros(1),
            Vector::zeros(1),
            1,
            lay,
        );
        OCProblem {
            model: Arc::new(m),
            cost: Arc::new(cost),
            init: InitialState::Fixed(Vector::from_vec(vec![1.0])),
            theta: Vector::from_vec(vec![theta, 1.0]),
            horizon: 1,
            bounds: None,
        }
    }

    struct TerminalSquare;
    impl LossSpec for TerminalSquare {
        fn value(&self, t: &Trajectory) -> Result<f64> {
            Ok(t.xs.last().unwrap().norm_squared())
        }
        fn grad(&self, t: &Trajectory) -> Result<LossGrad> {
            let mut g = LossGrad::zeros(t.xs[0].len(), t.us[0].len(), t.horizon());
            *g.gx.last_mut().unwrap() = 2.0 * t.xs.last().unwrap();
            Ok(g)
        }
    }

    fn tight() -> SolverOptions {
        SolverOptions {
            budget: 200,
            tol: 1e-13,
            relative: true,
            reg_init: 0.0,
            reg_min: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn scalar_example_matches_closed_form() {
        // u*(theta) = -1/(1+theta); L = (theta/(1+theta))^2; dL/dtheta = 2 theta/(1+theta)^3
        let p = scalar_problem(1.0);
        let sol = solve(&p, &[Vector::zeros(1)], &tight()).unwrap();
        assert!((sol.traj.us[0][0] + 0.5).abs() < 1e-12);
        let jac = pdp_jacobian(&p, &sol.traj, HessianMode::FullNewton, 0.0).unwrap();
        assert!((jac.du[0][(0, 0)] - 0.25).abs() < 1e-12);
        let opts = DocOptions::default();
        for route in Route::ALL {
            let g = hypergradient(&p, &sol, &TerminalSquare, route, &opts).unwrap();
            assert!((g.grad[0] - 0.25).abs() < 1e-6, "{route:?} {}", g.grad[0]);
        }
    }

    #[test]
    fn zero_loss_gives_zero_backward_quantities() {
        let p = dubins_problem();
        let sol = solve(&p, &vec![Vector::zeros(2); p.horizon], &tight()).unwrap();
        let bundle = compute_derivatives(&p, &sol.traj, HessianMode::FullNewton, true).unwrap();
        let lg = LossGrad::zeros(3, 2, p.horizon);
        let bp = doc_backward(&bundle, &lg, 0.0, 1e10).unwrap();
        assert!(bp.vx_tilde.iter().all(|v| v.amax() == 0.0));
        assert!(bp.k_tilde.iter().all(|v| v.amax() == 0.0));
        let (g, _) = doc_forward(&bundle, &bp, false);
        assert_eq!(g.amax(), 0.0);
    }

    fn dubins_problem() -> OCProblem {
        let n = 30;
        let lay = ParamLayout {
            q: 0,
            r: 3,
            qf: Some(5),
            q_b: ParamRef::Fixed(0.0),
        };
        let cost = TrackingCost::constant(
            Features::Identity(3),
            2,
            None,
            Vector::from_vec(vec![2.0, 1.5, 0.5]),
            Vector::zeros(2),
            n,
            lay,
        );
        OCProblem {
            model: Arc::new(Dubins { dt: 0.1 }),
            cost: Arc::new(cost),
            init: InitialState::Offset {
                base: Vector::zeros(3),
                start: 8,
            },
            theta: Vector::from_vec(vec![
                1.0, 1.0, 0.2, 0.3, 0.4, 20.0, 20.0, 5.0, 0.0, 0.0, 0.1,
            ]),
            horizon: n,
            bounds: None,
        }
    }

    fn dubins_loss(n: usize) -> QuadraticLoss {
        QuadraticLoss::constant(
            Vector::from_vec(vec![1.0, 2.0, 0.5]),
            Vector::from_vec(vec![0.1, 0.3]),
            Vector::from_vec(vec![1.0, 1.0, 0.0]),
            Vector::from_vec(vec![0.5, 0.0]),
            n,
        )
    }

    fn rel(a: &Vector, b: &Vector) -> f64 {
        (a - b).norm() / (1.0 + b.norm())
    }

    #[test]
    fn doc_full_matches_pdp_and_fd_on_dubins() {
        let p = dubins_problem();
        let sol = solve(
            &p,
            &vec![Vector::from_vec(vec![0.5, 0.0]); p.horizon],
            &tight(),
        )
        .unwrap();
        assert!(sol.converged);
        let loss = dubins_loss(p.horizon);
        let opts = DocOptions::default();
        let doc = hypergradient(&p, &sol, &loss, Route::DocFull, &opts).unwrap();
        let pdp = hypergradient(&p, &sol, &loss, Route::Pdp, &opts).unwrap();
        let fd = hypergradient(&p, &sol, &loss, Route::FiniteDifference, &opts).unwrap();
        assert!(
            rel(&doc.grad, &pdp.grad) < 1e-10,
            "{}",
            rel(&doc.grad, &pdp.grad)
        );
        assert!(
            rel(&doc.grad, &fd.grad) < 1e-4,
            "{}\n{}\n{}",
            rel(&doc.grad, &fd.grad),
            doc.grad,
            fd.grad
        );
        let gn = hypergradient(&p, &sol, &loss, Route::DocGaussNewton, &opts).unwrap();
        assert!(rel(&gn.grad, &doc.grad) > 1e-8);
    }

    #[test]
    fn fd_step_sweep_is_stable() {
        let p = dubins_problem();
        let sol = solve(
            &p,
            &vec![Vector::from_vec(vec![0.5, 0.0]); p.horizon],
            &tight(),
        )
        .unwrap();
        let loss = dubins_loss(p.horizon);
        let grads: Vec<Vector> = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&h| {
                let o = FdOptions {
                    rel_step: h,
                    ..Default::default()
                };
                fd_hypergradient(&p, &sol.traj.us, &loss, &o).unwrap()
            })
            .collect();
        assert!(rel(&grads[0], &grads[2]) < 1e-3);
        assert!(rel(&grads[1], &grads[2]) < 1e-3);
    }

    #[test]
    fn pdp_contraction_reproduces_doc() {
        let p = dubins_problem();
        let sol = solve(
            &p,
            &vec![Vector::from_vec(vec![0.5, 0.0]); p.horizon],
            &tight(),
        )
        .unwrap();
        let loss = dubins_loss(p.horizon);
        let jac = pdp_jacobian(&p, &sol.traj, HessianMode::FullNewton, sol.reg).unwrap();
        let via_jac = jac.contract(&loss.grad(&sol.traj).unwrap());
        let via_stacked = jac
            .stacked()
            .tr_mul(&loss.grad(&sol.traj).unwrap().stacked());
        let doc = hypergradient(&p, &sol, &loss, Route::DocFull, &DocOptions::default()).unwrap();
        assert!((&via_jac - &doc.grad).amax() < 1e-10 * (1.0 + doc.grad.amax()));
        assert!((&via_jac - &via_stacked).amax() < 1e-10 * (1.0 + doc.grad.amax()));
        // initial-state block is xi_theta
        assert_eq!(jac.dx[0][(2, 10)], 1.0);
    }

    #[test]
    fn theta_independent_problem_has_zero_gradient() {
        let mut p = dubins_problem();
        // extra unused parameter at the end
        let mut th = p.theta.as_slice().to_vec();
        th.push(3.0);
        p.theta = Vector::from_vec(th);
        let sol = solve(
            &p,
            &vec![Vector::from_vec(vec![0.5, 0.0]); p.horizon],
            &tight(),
        )
        .unwrap();
        let g = hypergradient(
            &p,
            &sol,
            &dubins_loss(p.horizon),
            Route::DocFull,
            &DocOptions::default(),
        )
        .unwrap();
        assert_eq!(g.grad[11], 0.0);
    }

    #[test]
    fn delta_z_is_stored_on_request() {
        let p = dubins_problem();
        let sol = solve(
            &p,
            &vec![Vector::from_vec(vec![0.5, 0.0]); p.horizon],
            &tight(),
        )
        .unwrap();
        let opts = DocOptions {
            store_delta_z: true,
            ..Default::default()
        };
        let g = hypergradient(&p, &sol, &dubins_loss(p.horizon), Route::DocFull, &opts).unwrap();
        let dz = g.delta_z.unwrap();
        assert_eq!(dz.dx.len(), p.horizon + 1);
        assert_eq!(dz.du.len(), p.horizon);
        assert_eq!(dz.dlam.len(), p.horizon + 1);
        assert!(hypergradient(
            &p,
            &sol,
            &dubins_loss(p.horizon),
            Route::DocFull,
            &DocOptions::default()
        )
        .unwrap()
        .delta_z
        .is_none());
    }

    #[test]
    fn saturated_controls_do_not_move() {
        let mut p = dubins_problem();
        p.bounds = Some(ControlBounds::symmetric(&[0.6, 0.3]).unwrap());
        let sol = solve(&p, &vec![Vector::zeros(2); p.horizon], &tight()).unwrap();
        let bundle = compute_derivatives(&p, &sol.traj, HessianMode::FullNewton, true).unwrap();
        let n_active: usize = bundle
            .active
            .iter()
            .map(|a| a.iter().filter(|&&b| b).count())
            .sum();
        assert!(n_active > 0);
        let jac = pdp_from_bundle(&bundle, sol.reg, 1e10).unwrap();
        for k in 0..p.horizon {
            for i in 0..2 {
                if bundle.active[k][i] {
                    assert_eq!(jac.du[k].row(i).amax(), 0.0);
                }
            }
        }
        let loss = dubins_loss(p.horizon);
        let doc = hypergradient(&p, &sol, &loss, Route::DocFull, &DocOptions::default()).unwrap();
        let fd = hypergradient(
            &p,
            &sol,
            &loss,
            Route::FiniteDifference,
            &DocOptions::default(),
        )
        .unwrap();
        assert!(
            rel(&doc.grad, &fd.grad) < 1e-3,
            "{}",
            rel(&doc.grad, &fd.grad)
        );
    }

    #[test]
    fn loss_gradient_matches_fd() {
        let p = dubins_problem();
        let traj = p
            .trajectory(vec![Vector::from_vec(vec![0.7, 0.2]); p.horizon])
            .unwrap();
        let loss = dubins_loss(p.horizon);
        let g = loss.grad(&traj).unwrap();
        let h = 1e-6;
        for k in [0usize, 7, 30] {
            for i in 0..3 {
                let mut tp = traj.clone();
                tp.xs[k][i] += h;
                let mut tm = traj.clone();
                tm.xs[k][i] -= h;
                let fd = (loss.value(&tp).unwrap() - loss.value(&tm).unwrap()) / (2.0 * h);
                assert!((fd - g.gx[k][i]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn route_names_round_trip() {
        for r in Route::ALL {
            assert_eq!(r.name().parse::<Route>().unwrap(), r);
        }
        assert!("bogus".parse::<Route>().is_err());
    }
}
