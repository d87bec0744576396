//! Box-constrained differential dynamic programming.
//!
//! Gauss-Newton (iLQR) or full-Newton backward passes, a backtracking
//! forward pass and Levenberg-Marquardt style regularization of `Q_uu`.

use nalgebra::Cholesky;
use nalgebra::Dyn;
use serde::{Deserialize, Serialize};

use crate::bundle::{compute_derivatives, stationarity_residual, HessianMode};
use crate::dynamics::{Matrix, Vector};
use crate::error::{Error, Result};
use crate::problem::{OCProblem, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Maximum number of DDP iterations.
    pub budget: usize,
    /// Stop once a full iteration decreases the cost by less than this.
    pub tol: f64,
    /// Scale `tol` by `1 + |J|`.
    pub relative: bool,
    pub mode: HessianMode,
    /// Additionally require the free-component stationarity to be below this.
    pub kkt_tol: Option<f64>,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub line_search_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            budget: 100,
            tol: 1e-3,
            relative: false,
            mode: HessianMode::GaussNewton,
            kkt_tol: None,
            reg_init: 1e-6,
            reg_min: 1e-9,
            reg_max: 1e10,
            line_search_steps: 11,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub traj: Trajectory,
    /// Multipliers `lambda_0 .. lambda_N` at the returned trajectory.
    pub lambdas: Vec<Vector>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    /// Regularization in effect at exit.
    pub reg: f64,
    /// Cost after the initial rollout and after each accepted iteration.
    pub cost_history: Vec<f64>,
}

/// Feedforward and feedback gains from one backward pass.
#[derive(Debug, Clone)]
pub struct Gains {
    pub k: Vec<Vector>,
    pub big_k: Vec<Matrix>,
    /// Linear and quadratic terms of the predicted decrease.
    pub dv: (f64, f64),
}

/// Cholesky of `m + reg I`.
pub(crate) fn factor(m: &Matrix, reg: f64) -> Option<Cholesky<f64, Dyn>> {
    let mut a = m.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += reg;
    }
    Cholesky::new(a)
}

/// Factor `m` without shift if possible, otherwise escalate a diagonal
/// shift from `max(start, 1e-8)` by decades. Returns the shift used.
pub(crate) fn factor_escalating(
    m: &Matrix,
    start: f64,
    max: f64,
) -> Option<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = factor(m, 0.0) {
        return Some((c, 0.0));
    }
    let mut reg = start.max(1e-8);
    while reg <= max {
        if let Some(c) = factor(m, reg) {
            return Some((c, reg));
        }
        reg *= 10.0;
    }
    None
}

pub(crate) fn select(m: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn quad(h: &Matrix, g: &Vector, x: &Vector) -> f64 {
    g.dot(x) + 0.5 * x.dot(&(h * x))
}

/// Projected-Newton solution of `min 0.5 x'Hx + g'x` s.t. `lo <= x <= hi`.
/// Returns the minimizer and the free set at it; `None` when `H` is not
/// positive definite on some free subspace encountered.
pub fn box_qp(h: &Matrix, g: &Vector, lo: &Vector, hi: &Vector) -> Option<(Vector, Vec<bool>)> {
    let n = g.len();
    let clamp = |v: &Vector| Vector::from_fn(n, |i, _| v[i].clamp(lo[i], hi[i]));
    let mut x = clamp(&Vector::zeros(n));
    let clamped_at = |x: &Vector, grad: &Vector| -> Vec<bool> {
        (0..n)
            .map(|i| (x[i] <= lo[i] && grad[i] > 0.0) || (x[i] >= hi[i] && grad[i] < 0.0))
            .collect()
    };
    for _ in 0..100 {
        let grad = g + h * &x;
        let clamped = clamped_at(&x, &grad);
        let free: Vec<usize> = (0..n).filter(|&i| !clamped[i]).collect();
        if free.is_empty() {
            break;
        }
        let gf = Vector::from_fn(free.len(), |i, _| grad[free[i]]);
        if gf.amax() < 1e-13 {
            break;
        }
        let chol = Cholesky::new(select(h, &free, &free))?;
        let df = -chol.solve(&gf);
        let mut dir = Vector::zeros(n);
        for (i, &fi) in free.iter().enumerate() {
            dir[fi] = df[i];
        }
        let val = quad(h, g, &x);
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..30 {
            let xn = clamp(&(&x + &dir * step));
            if quad(h, g, &xn) - val <= 0.1 * grad.dot(&(&xn - &x)) {
                next = Some(xn);
                break;
            }
            step *= 0.5;
        }
        let Some(xn) = next else { break };
        let gain = val - quad(h, g, &xn);
        x = xn;
        if gain < 1e-14 * (1.0 + val.abs()) {
            break;
        }
    }
    let grad = g + h * &x;
    let free = clamped_at(&x, &grad).iter().map(|c| !c).collect();
    Some((x, free))
}

/// One backward sweep. Fails with `NotPositiveDefinite` when `Q_uu + reg I`
/// cannot be factored on the free set.
pub fn backward_pass(
    p: &OCProblem,
    traj: &Trajectory,
    mode: HessianMode,
    reg: f64,
) -> Result<Gains> {
    let bundle = compute_derivatives(p, traj, mode, false)?;
    let n = p.horizon;
    let nu = p.n_u();
    let mut vx = bundle.phi_x.clone();
    let mut vxx = bundle.phi_xx.clone();
    let mut ks = vec![Vector::zeros(nu); n];
    let mut kks = vec![Matrix::zeros(nu, p.n_x()); n];
    let (mut dv1, mut dv2) = (0.0, 0.0);
    for k in (0..n).rev() {
        let s = &bundle.steps[k];
        let qx = &s.lx + s.fx.tr_mul(&vx);
        let qu = &s.lu + s.fu.tr_mul(&vx);
        let vfx = &vxx * &s.fx;
        let qxx = &s.lxx + s.fx.tr_mul(&vfx);
        let qux = &s.lux + s.fu.tr_mul(&vfx);
        let quu = &s.luu + s.fu.tr_mul(&(&vxx * &s.fu));
        let quu = (&quu + quu.transpose()) * 0.5;
        let mut quu_reg = quu.clone();
        for i in 0..nu {
            quu_reg[(i, i)] += reg;
        }
        let fail = Error::NotPositiveDefinite { step: k, reg };
        let (kff, kfb) = match &p.bounds {
            None => {
                let chol = Cholesky::new(quu_reg.clone()).ok_or(fail)?;
                (-chol.solve(&qu), -chol.solve(&qux))
            }
            Some(b) => {
                let u = &traj.us[k];
                let lo = Vector::from_fn(nu, |i, _| b.lower[i] - u[i]);
                let hi = Vector::from_fn(nu, |i, _| b.upper[i] - u[i]);
                let (kff, free) = box_qp(&quu_reg, &qu, &lo, &hi).ok_or(fail.clone())?;
                let idx: Vec<usize> = (0..nu).filter(|&i| free[i]).collect();
                let mut kfb = Matrix::zeros(nu, p.n_x());
                if !idx.is_empty() {
                    let chol = Cholesky::new(select(&quu_reg, &idx, &idx)).ok_or(fail)?;
                    let rows = select(&qux, &idx, &(0..p.n_x()).collect::<Vec<_>>());
                    let sol = -chol.solve(&rows);
                    for (r, &i) in idx.iter().enumerate() {
                        kfb.row_mut(i).copy_from(&sol.row(r));
                    }
                }
                (kff, kfb)
            }
        };
        dv1 += kff.dot(&qu);
        dv2 += 0.5 * kff.dot(&(&quu * &kff));
        let kt_quu = kfb.tr_mul(&quu);
        vx = &qx + &kt_quu * &kff + kfb.tr_mul(&qu) + qux.tr_mul(&kff);
        vxx = &qxx + &kt_quu * &kfb + kfb.tr_mul(&qux) + qux.tr_mul(&kfb);
        vxx = (&vxx + vxx.transpose()) * 0.5;
        ks[k] = kff;
        kks[k] = kfb;
    }
    Ok(Gains {
        k: ks,
        big_k: kks,
        dv: (dv1, dv2),
    })
}

/// Roll out `u = ubar + alpha k + K (x - xbar)`, clamped into the bounds.
pub fn forward_pass(
    p: &OCProblem,
    traj: &Trajectory,
    gains: &Gains,
    alpha: f64,
) -> Result<Trajectory> {
    let n = p.horizon;
    let mut xs = Vec::with_capacity(n + 1);
    let mut us = Vec::with_capacity(n);
    xs.push(p.x0());
    for k in 0..n {
        let dx = &xs[k] - &traj.xs[k];
        let mut u = &traj.us[k] + &gains.k[k] * alpha + &gains.big_k[k] * dx;
        p.clamp(&mut u);
        let y = p
            .model
            .step(&xs[k], &u, &p.theta)
            .map_err(|_| Error::NonFiniteState { step: k + 1 })?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: k + 1 });
        }
        us.push(u);
        xs.push(y);
    }
    Ok(Trajectory { xs, us })
}

/// Solve from the warm start `us`, which is clamped and rolled out first.
pub fn solve(p: &OCProblem, us: &[Vector], opts: &SolverOptions) -> Result<Solution> {
    let mut us0 = us.to_vec();
    for u in &mut us0 {
        p.clamp(u);
    }
    let mut traj = p.trajectory(us0)?;
    let mut cost = p.total_cost(&traj);
    let mut history = vec![cost];
    let mut reg = opts.reg_init;
    let mut converged = false;
    let mut iterations = 0;
    let threshold = |j: f64| {
        if opts.relative {
            opts.tol * (1.0 + j.abs())
        } else {
            opts.tol
        }
    };

    while iterations < opts.budget {
        iterations += 1;
        let gains = loop {
            match backward_pass(p, &traj, opts.mode, reg) {
                Ok(g) => break Some(g),
                Err(Error::NotPositiveDefinite { .. }) => {
                    reg = (reg * 10.0).max(opts.reg_min);
                    if reg > opts.reg_max {
                        break None;
                    }
                }
                Err(e) => return Err(e),
            }
        };
        let Some(gains) = gains else { break };

        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..opts.line_search_steps {
            if let Ok(cand) = forward_pass(p, &traj, &gains, alpha) {
                let c = p.total_cost(&cand);
                if c < cost {
                    accepted = Some((cand, c, alpha));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((cand, c, alpha)) => {
                let decrease = cost - c;
                traj = cand;
                cost = c;
                history.push(cost);
                if alpha == 1.0 {
                    reg = (reg * 0.5).max(opts.reg_min);
                }
                if decrease < threshold(cost) && kkt_ok(p, &traj, opts)? {
                    converged = true;
                    break;
                }
            }
            None => {
                let expected = -(gains.dv.0 + gains.dv.1);
                if expected < threshold(cost) && kkt_ok(p, &traj, opts)? {
                    converged = true;
                    break;
                }
                reg *= 10.0;
                if reg > opts.reg_max {
                    break;
                }
            }
        }
    }

    let bundle = compute_derivatives(p, &traj, HessianMode::GaussNewton, false)?;
    Ok(Solution {
        kkt_residual: stationarity_residual(&bundle),
        lambdas: bundle.lambdas,
        traj,
        cost,
        iterations,
        converged,
        reg,
        cost_history: history,
    })
}

fn kkt_ok(p: &OCProblem, traj: &Trajectory, opts: &SolverOptions) -> Result<bool> {
    match opts.kkt_tol {
        None => Ok(true),
        Some(t) => {
            let b = compute_derivatives(p, traj, HessianMode::GaussNewton, false)?;
            Ok(stationarity_residual(&b) <= t)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::ParamRef;
    use crate::bundle::kkt_residual_at;
    use crate::cost::{Features, ParamLayout, TrackingCost};
    use crate::dynamics::dubins::Dubins;
    use crate::dynamics::{ControlBounds, LinearModel};
    use crate::problem::InitialState;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn scalar_lq(a: f64, b: f64, q: f64, r: f64, x0: f64, n: usize) -> OCProblem {
        let m = LinearModel::new(Matrix::from_element(1, 1, a), Matrix::from_element(1, 1, b));
        let lay = ParamLayout {
            q: 0,
            r: 1,
            qf: None,
            q_b: ParamRef::Fixed(0.0),
        };
        let cost = TrackingCost::constant(
            Features::Identity(1),
            1,
            None,
            Vector::zeros(1),
            Vector::zeros(1),
            n,
            lay,
        );
        OCProblem {
            model: Arc::new(m),
            cost: Arc::new(cost),
            init: InitialState::Fixed(Vector::from_vec(vec![x0])),
            theta: Vector::from_vec(vec![q, r]),
            horizon: n,
            bounds: None,
        }
    }

    fn double_integrator(n: usize) -> OCProblem {
        let m = LinearModel::new(
            Matrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            Matrix::from_row_slice(2, 1, &[0.005, 0.1]),
        );
        let lay = ParamLayout {
            q: 0,
            r: 2,
            qf: Some(3),
            q_b: ParamRef::Fixed(0.0),
        };
        let cost = TrackingCost::constant(
            Features::Identity(2),
            1,
            None,
            Vector::from_vec(vec![1.0, 0.0]),
            Vector::zeros(1),
            n,
            lay,
        );
        OCProblem {
            model: Arc::new(m),
            cost: Arc::new(cost),
            init: InitialState::Fixed(Vector::from_vec(vec![0.0, 0.0])),
            theta: Vector::from_vec(vec![1.0, 0.1, 0.01, 50.0, 5.0]),
            horizon: n,
            bounds: None,
        }
    }

    fn dubins(n: usize) -> OCProblem {
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
            Vector::from_vec(vec![2.0, 1.0, 0.0]),
            Vector::zeros(2),
            n,
            lay,
        );
        OCProblem {
            model: Arc::new(Dubins { dt: 0.1 }),
            cost: Arc::new(cost),
            init: InitialState::Fixed(Vector::zeros(3)),
            theta: Vector::from_vec(vec![1.0, 1.0, 0.1, 0.1, 0.1, 50.0, 50.0, 5.0]),
            horizon: n,
            bounds: None,
        }
    }

    fn exact() -> SolverOptions {
        SolverOptions {
            reg_init: 0.0,
            reg_min: 0.0,
            ..Default::default()
        }
    }

    /// Riccati recursion for the scalar problem, independent of the solver.
    fn riccati_first_control(a: f64, b: f64, q: f64, r: f64, x0: f64, n: usize) -> (f64, f64) {
        let mut p = q;
        let mut gain = 0.0;
        for _ in 0..n {
            gain = a * b * p / (r + b * b * p);
            p = q + a * a * p - a * b * p * gain;
        }
        (-gain * x0, p * x0 * x0)
    }

    #[test]
    fn scalar_lq_matches_riccati() {
        let (a, b, q, r, x0, n) = (1.2, 0.7, 2.0, 0.5, 1.5, 6);
        let p = scalar_lq(a, b, q, r, x0, n);
        let sol = solve(&p, &vec![Vector::zeros(1); n], &exact()).unwrap();
        let (u0, j) = riccati_first_control(a, b, q, r, x0, n);
        assert!(
            (sol.traj.us[0][0] - u0).abs() < 1e-10,
            "{} vs {u0}",
            sol.traj.us[0][0]
        );
        assert!((sol.cost - j).abs() < 1e-9 * j);
    }

    #[test]
    fn lq_converges_in_two_iterations() {
        let p = double_integrator(30);
        let sol = solve(&p, &vec![Vector::zeros(1); 30], &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations <= 2, "{}", sol.iterations);
        assert!(sol.kkt_residual <= 1e-8, "{}", sol.kkt_residual);
    }

    #[test]
    fn single_iteration_budget_does_not_converge() {
        let p = dubins(20);
        let opts = SolverOptions {
            budget: 1,
            ..Default::default()
        };
        let sol = solve(&p, &vec![Vector::zeros(2); 20], &opts).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(!sol.converged);
    }

    #[test]
    fn dubins_converges_with_small_kkt_residual() {
        let p = dubins(30);
        for mode in [HessianMode::GaussNewton, HessianMode::FullNewton] {
            let opts = SolverOptions {
                mode,
                tol: 1e-12,
                relative: true,
                ..Default::default()
            };
            let sol = solve(&p, &vec![Vector::from_vec(vec![0.5, 0.1]); 30], &opts).unwrap();
            assert!(sol.converged, "{mode:?}");
            assert!(sol.kkt_residual < 1e-6, "{mode:?} {}", sol.kkt_residual);
            let r = kkt_residual_at(&p, &sol.traj, &sol.lambdas).unwrap();
            assert!(r < 1e-6);
        }
    }

    #[test]
    fn returned_trajectory_rerolls_exactly() {
        let p = dubins(25);
        let sol = solve(&p, &vec![Vector::zeros(2); 25], &SolverOptions::default()).unwrap();
        let xs = p.rollout(&sol.traj.us).unwrap();
        assert_eq!(xs, sol.traj.xs);
        assert_eq!(p.total_cost(&sol.traj), sol.cost);
    }

    #[test]
    fn gauss_newton_and_full_newton_agree_on_linear_models() {
        let p = double_integrator(20);
        let us = vec![Vector::from_vec(vec![0.3]); 20];
        let a = solve(
            &p,
            &us,
            &SolverOptions {
                mode: HessianMode::GaussNewton,
                ..Default::default()
            },
        )
        .unwrap();
        let b = solve(
            &p,
            &us,
            &SolverOptions {
                mode: HessianMode::FullNewton,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a.traj, b.traj);
    }

    #[test]
    fn box_qp_matches_enumeration() {
        let h = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = Vector::from_vec(vec![-4.0, 3.0]);
        let lo = Vector::from_vec(vec![-1.0, -1.0]);
        let hi = Vector::from_vec(vec![1.0, 1.0]);
        let (x, free) = box_qp(&h, &g, &lo, &hi).unwrap();
        // brute force on a fine grid
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=400 {
            for j in 0..=400 {
                let v = Vector::from_vec(vec![-1.0 + i as f64 / 200.0, -1.0 + j as f64 / 200.0]);
                let q = quad(&h, &g, &v);
                if q < best.0 {
                    best = (q, v[0], v[1]);
                }
            }
        }
        assert!((quad(&h, &g, &x) - best.0).abs() < 1e-3);
        assert!((x[0] - best.1).abs() < 1e-2 && (x[1] - best.2).abs() < 1e-2);
        assert_eq!(free, vec![false, false]);
    }

    /// Dense KKT system of the equality-constrained QP solved directly.
    #[test]
    fn bounded_lq_matches_dense_qp_when_bounds_inactive() {
        let n = 10;
        let mut p = double_integrator(n);
        p.bounds = Some(ControlBounds::symmetric(&[100.0]).unwrap());
        let sol = solve(&p, &vec![Vector::zeros(1); n], &exact()).unwrap();
        // stack z = (u_0..u_{N-1}); x_k = A^k x0 + sum A^{k-1-j} B u_j, x0 = 0
        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = Matrix::from_row_slice(2, 1, &[0.005, 0.1]);
        let mut big = Matrix::zeros(2 * (n + 1), n);
        for k in 1..=n {
            for j in 0..k {
                let mut m = b.clone();
                for _ in 0..(k - 1 - j) {
                    m = &a * m;
                }
                big.view_mut((2 * k, j), (2, 1)).copy_from(&m);
            }
        }
        let mut w = Vector::zeros(2 * (n + 1));
        let mut target = Vector::zeros(2 * (n + 1));
        for k in 0..=n {
            let (q0, q1) = if k == n { (50.0, 5.0) } else { (1.0, 0.1) };
            w[2 * k] = q0;
            w[2 * k + 1] = q1;
            target[2 * k] = 1.0;
        }
        let wm = Matrix::from_diagonal(&w);
        let h = big.tr_mul(&(&wm * &big)) + Matrix::identity(n, n) * 0.01;
        let rhs = big.tr_mul(&(&wm * &target));
        let u = h.cholesky().unwrap().solve(&rhs);
        for k in 0..n {
            assert!((sol.traj.us[k][0] - u[k]).abs() < 1e-8, "{k}");
        }
    }

    #[test]
    fn tight_bounds_are_respected_and_stationary_on_free_set() {
        let n = 20;
        let mut p = dubins(n);
        p.bounds = Some(ControlBounds::symmetric(&[0.8, 0.5]).unwrap());
        let opts = SolverOptions {
            tol: 1e-12,
            relative: true,
            ..Default::default()
        };
        let sol = solve(&p, &vec![Vector::zeros(2); n], &opts).unwrap();
        let b = p.bounds.as_ref().unwrap();
        assert!(sol.traj.us.iter().any(|u| (u[0] - 0.8).abs() < 1e-12));
        for u in &sol.traj.us {
            for i in 0..2 {
                assert!(u[i] >= b.lower[i] && u[i] <= b.upper[i]);
            }
        }
        assert!(sol.kkt_residual < 1e-4, "{}", sol.kkt_residual);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn accepted_costs_strictly_decrease(
            px in -3.0f64..3.0, py in -3.0f64..3.0, v0 in -1.0f64..1.0, w0 in -1.0f64..1.0,
        ) {
            let mut p = dubins(15);
            p.init = InitialState::Fixed(Vector::from_vec(vec![px, py, 0.2]));
            let sol = solve(&p, &vec![Vector::from_vec(vec![v0, w0]); 15], &SolverOptions::default()).unwrap();
            for w in sol.cost_history.windows(2) {
                prop_assert!(w[1] < w[0]);
            }
        }
    }
}
