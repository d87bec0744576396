//! Per-step derivatives of the dynamics and the Lagrangian
//! `L = sum_k l_k + phi + sum_k lambda_{k+1}^T (f(x_k, u_k) - x_{k+1}) + lambda_0^T (xi - x_0)`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Matrix, Vector};
use crate::error::Result;
use crate::problem::{active_set, OCProblem, Trajectory};

/// Whether the dynamics curvature enters the Lagrangian Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Drop `lambda (x) f_zz` from the state/control blocks (iLQR).
    #[default]
    GaussNewton,
    /// Keep every second-order term.
    FullNewton,
}

#[derive(Debug, Clone)]
pub struct StepBlocks {
    pub fx: Matrix,
    pub fu: Matrix,
    /// Empty (`n_x x 0`) unless parameter blocks were requested.
    pub ft: Matrix,
    pub lx: Vector,
    pub lu: Vector,
    pub lxx: Matrix,
    pub lux: Matrix,
    pub luu: Matrix,
    pub lxt: Matrix,
    pub lut: Matrix,
}

#[derive(Debug, Clone)]
pub struct DerivativeBundle {
    pub mode: HessianMode,
    pub steps: Vec<StepBlocks>,
    pub phi_x: Vector,
    pub phi_xx: Matrix,
    pub phi_xt: Matrix,
    pub xi_t: Matrix,
    /// `lambda_0 .. lambda_N` from the multiplier recursion.
    pub lambdas: Vec<Vector>,
    /// Per step: `l_u + f_u^T lambda_{k+1}`.
    pub stationarity: Vec<Vector>,
    /// Per step: box components pinned with an outward gradient.
    pub active: Vec<Vec<bool>>,
    pub with_params: bool,
}

impl DerivativeBundle {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn n_theta(&self) -> usize {
        self.xi_t.ncols()
    }
}

/// `lambda_N = phi_x`, `lambda_k = l_x + f_x^T lambda_{k+1}`.
pub fn multipliers(steps: &[StepBlocks], phi_x: &Vector) -> Vec<Vector> {
    let n = steps.len();
    let mut lam = vec![Vector::zeros(0); n + 1];
    lam[n] = phi_x.clone();
    for k in (0..n).rev() {
        lam[k] = &steps[k].lx + steps[k].fx.tr_mul(&lam[k + 1]);
    }
    lam
}

/// Evaluate the bundle at `traj`. Parameter blocks (`f_theta`, `l_xtheta`,
/// ...) are only filled when `with_params` is set.
pub fn compute_derivatives(
    p: &OCProblem,
    traj: &Trajectory,
    mode: HessianMode,
    with_params: bool,
) -> Result<DerivativeBundle> {
    let n = p.horizon;
    let nt = if with_params { p.n_theta() } else { 0 };
    let theta = &p.theta;
    let mut steps = Vec::with_capacity(n);
    for k in 0..n {
        let (x, u) = (&traj.xs[k], &traj.us[k]);
        let (fx, fu) = p.model.jacobians(x, u, theta)?;
        let rd = p.cost.running_derivs(k, x, u, theta);
        let (ft, lxt, lut) = if with_params {
            (p.model.param_jacobian(x, u, theta)?, rd.lxt, rd.lut)
        } else {
            (
                Matrix::zeros(p.n_x(), 0),
                Matrix::zeros(p.n_x(), 0),
                Matrix::zeros(p.n_u(), 0),
            )
        };
        steps.push(StepBlocks {
            fx,
            fu,
            ft,
            lx: rd.lx,
            lu: rd.lu,
            lxx: rd.lxx,
            lux: rd.lux,
            luu: rd.luu,
            lxt,
            lut,
        });
    }
    let td = p.cost.terminal_derivs(&traj.xs[n], theta);
    let lambdas = multipliers(&steps, &td.vx);

    if !p.model.is_linear() {
        for k in 0..n {
            let (x, u) = (&traj.xs[k], &traj.us[k]);
            let w = &lambdas[k + 1];
            match mode {
                HessianMode::FullNewton => {
                    let so = p.model.second_order(x, u, theta, w)?;
                    let s = &mut steps[k];
                    s.lxx += &so.xx;
                    s.lux += &so.ux;
                    s.luu += &so.uu;
                    if with_params {
                        s.lxt += &so.xt;
                        s.lut += &so.ut;
                    }
                }
                HessianMode::GaussNewton => {
                    if with_params {
                        let (xt, ut) = p.model.second_order_params(x, u, theta, w)?;
                        steps[k].lxt += &xt;
                        steps[k].lut += &ut;
                    }
                }
            }
        }
    }

    let bounds = p.bounds.as_ref();
    let mut stationarity = Vec::with_capacity(n);
    let mut active = Vec::with_capacity(n);
    for k in 0..n {
        let g = &steps[k].lu + steps[k].fu.tr_mul(&lambdas[k + 1]);
        active.push(active_set(bounds, &traj.us[k], &g));
        stationarity.push(g);
    }

    Ok(DerivativeBundle {
        mode,
        steps,
        phi_x: td.vx,
        phi_xx: td.vxx,
        phi_xt: if with_params {
            td.vxt
        } else {
            Matrix::zeros(p.n_x(), 0)
        },
        xi_t: if with_params {
            p.init.jacobian(p.n_x(), nt)
        } else {
            Matrix::zeros(p.n_x(), 0)
        },
        lambdas,
        stationarity,
        active,
        with_params,
    })
}

/// Largest free-component stationarity violation in a bundle.
pub fn stationarity_residual(bundle: &DerivativeBundle) -> f64 {
    let mut r: f64 = 0.0;
    for (g, act) in bundle.stationarity.iter().zip(&bundle.active) {
        for i in 0..g.len() {
            if !act[i] {
                r = r.max(g[i].abs());
            }
        }
    }
    r
}

/// KKT residual at a trajectory: free-component stationarity plus the
/// dynamics defect and the multiplier-recursion residual.
pub fn kkt_residual_at(p: &OCProblem, traj: &Trajectory, lambdas: &[Vector]) -> Result<f64> {
    let bundle = compute_derivatives(p, traj, HessianMode::GaussNewton, false)?;
    let mut r = stationarity_residual(&bundle);
    let n = p.horizon;
    for k in 0..n {
        let y = p.model.step(&traj.xs[k], &traj.us[k], &p.theta)?;
        r = r.max((y - &traj.xs[k + 1]).amax());
    }
    if lambdas.len() == n + 1 {
        r = r.max((&lambdas[n] - &bundle.phi_x).amax());
        for k in 0..n {
            let s = &bundle.steps[k];
            let rec = &s.lx + s.fx.tr_mul(&lambdas[k + 1]);
            r = r.max((rec - &lambdas[k]).amax());
        }
    }
    Ok(r)
}
