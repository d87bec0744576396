//! Barrier functions and the discrete barrier state (DBaS).
//!
//! All constraints of a [`SafetyFunction`] are folded into one scalar
//! barrier `S(x) = sum_i B(h_i(x))`. The embedded system appends
//! `b' = S(f(x, u)) - gamma (S(x) - b)` to the plant.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::safety::SafetyFunction;
use crate::dynamics::{DynamicsModel, Matrix, SecondOrder, Vector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    Inverse,
    Log,
    RelaxedInverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierConfig {
    pub kind: BarrierKind,
    pub alpha: f64,
    pub gamma: f64,
    pub q_b: f64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        BarrierConfig {
            kind: BarrierKind::RelaxedInverse,
            alpha: 0.0,
            gamma: 0.0,
            q_b: 1.0,
        }
    }
}

impl BarrierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma = {} outside [-1, 1]",
                self.gamma
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "alpha = {} must be >= 0",
                self.alpha
            )));
        }
        if !(self.q_b >= 0.0) {
            return Err(Error::Config(format!("q_b = {} must be >= 0", self.q_b)));
        }
        Ok(())
    }
}

/// `B`, its first two derivatives in `zeta`, and the `alpha` sensitivities
/// of `B` and `B'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d_alpha: f64,
    pub d1_alpha: f64,
}

pub fn barrier_eval(kind: BarrierKind, alpha: f64, zeta: f64) -> Result<BarrierEval> {
    let plain = |value, d1, d2| BarrierEval {
        value,
        d1,
        d2,
        d_alpha: 0.0,
        d1_alpha: 0.0,
    };
    match kind {
        BarrierKind::Inverse => {
            if !(zeta > 0.0) {
                return Err(Error::Domain { zeta });
            }
            Ok(plain(
                1.0 / zeta,
                -1.0 / (zeta * zeta),
                2.0 / (zeta * zeta * zeta),
            ))
        }
        BarrierKind::Log => {
            if !(zeta > 0.0) {
                return Err(Error::Domain { zeta });
            }
            Ok(plain(-zeta.ln(), -1.0 / zeta, 1.0 / (zeta * zeta)))
        }
        BarrierKind::RelaxedInverse => {
            if zeta >= alpha {
                return barrier_eval(BarrierKind::Inverse, alpha, zeta);
            }
            if !(alpha > 0.0) || zeta.is_nan() {
                return Err(Error::Domain { zeta });
            }
            let d = zeta - alpha;
            let a2 = alpha * alpha;
            let a3 = a2 * alpha;
            let a4 = a2 * a2;
            Ok(BarrierEval {
                value: 1.0 / alpha - d / a2 + d * d / a3,
                d1: -1.0 / a2 + 2.0 * d / a3,
                d2: 2.0 / a3,
                d_alpha: -3.0 * d * d / a4,
                d1_alpha: -6.0 * d / a4,
            })
        }
    }
}

pub fn barrier_value(cfg: &BarrierConfig, zeta: f64) -> Result<f64> {
    Ok(barrier_eval(cfg.kind, cfg.alpha, zeta)?.value)
}

/// `S(x)` with gradient, optional Hessian, and `alpha` sensitivities.
#[derive(Debug, Clone)]
pub struct Aggregate {
    pub s: f64,
    pub grad: Vector,
    pub hess: Option<Matrix>,
    pub s_alpha: f64,
    pub grad_alpha: Vector,
}

pub fn aggregate_value(
    safety: &dyn SafetyFunction,
    kind: BarrierKind,
    alpha: f64,
    x: &Vector,
) -> Result<f64> {
    safety
        .values(x)
        .into_iter()
        .try_fold(0.0, |acc, h| Ok(acc + barrier_eval(kind, alpha, h)?.value))
}

pub fn aggregate(
    safety: &dyn SafetyFunction,
    kind: BarrierKind,
    alpha: f64,
    x: &Vector,
    hessian: bool,
) -> Result<Aggregate> {
    let n = x.len();
    let mut agg = Aggregate {
        s: 0.0,
        grad: Vector::zeros(n),
        hess: hessian.then(|| Matrix::zeros(n, n)),
        s_alpha: 0.0,
        grad_alpha: Vector::zeros(n),
    };
    for c in safety.evaluate(x, hessian) {
        let be = barrier_eval(kind, alpha, c.value)?;
        agg.s += be.value;
        agg.grad.axpy(be.d1, &c.grad, 1.0);
        agg.s_alpha += be.d_alpha;
        agg.grad_alpha.axpy(be.d1_alpha, &c.grad, 1.0);
        if let Some(h) = agg.hess.as_mut() {
            h.ger(be.d2, &c.grad, &c.grad, 1.0);
            if let Some(ch) = &c.hess {
                *h += ch * be.d1;
            }
        }
    }
    Ok(agg)
}

/// `b_0 = S(x_0)`.
pub fn init_barrier_state(
    safety: &dyn SafetyFunction,
    cfg: &BarrierConfig,
    x0: &Vector,
) -> Result<f64> {
    aggregate_value(safety, cfg.kind, cfg.alpha, x0)
}

/// One DBaS update: `S(f(x, u)) - gamma (S(x) - b)`.
pub fn dbas_step(
    cfg: &BarrierConfig,
    safety: &dyn SafetyFunction,
    f: &dyn DynamicsModel,
    x: &Vector,
    u: &Vector,
    b: f64,
) -> Result<f64> {
    let y = f.step(x, u, &Vector::zeros(0))?;
    let sy = aggregate_value(safety, cfg.kind, cfg.alpha, &y)?;
    if cfg.gamma == 0.0 {
        return Ok(sy);
    }
    let sx = aggregate_value(safety, cfg.kind, cfg.alpha, x)?;
    Ok(sy - cfg.gamma * (sx - b))
}

/// A scalar that is either fixed or read from `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParamRef {
    Fixed(f64),
    Theta(usize),
}

impl ParamRef {
    pub fn value(&self, theta: &Vector) -> f64 {
        match *self {
            ParamRef::Fixed(v) => v,
            ParamRef::Theta(i) => theta[i],
        }
    }

    pub fn index(&self) -> Option<usize> {
        match *self {
            ParamRef::Fixed(_) => None,
            ParamRef::Theta(i) => Some(i),
        }
    }
}

/// Safety-embedded system: plant state followed by one barrier state.
pub struct SafeSystem {
    pub plant: Arc<dyn DynamicsModel>,
    pub safety: Arc<dyn SafetyFunction>,
    pub kind: BarrierKind,
    pub gamma: ParamRef,
    pub alpha: ParamRef,
}

impl SafeSystem {
    pub fn new(
        plant: Arc<dyn DynamicsModel>,
        safety: Arc<dyn SafetyFunction>,
        kind: BarrierKind,
        gamma: ParamRef,
        alpha: ParamRef,
    ) -> Self {
        SafeSystem {
            plant,
            safety,
            kind,
            gamma,
            alpha,
        }
    }

    fn n(&self) -> usize {
        self.plant.state_dim()
    }

    fn split(&self, xh: &Vector) -> (Vector, f64) {
        let n = self.n();
        (xh.rows(0, n).into_owned(), xh[n])
    }

    /// Augmented state `(x, S(x))` for a plant state.
    pub fn embed(&self, x: &Vector, theta: &Vector) -> Result<Vector> {
        let b = aggregate_value(&*self.safety, self.kind, self.alpha.value(theta), x)?;
        let n = self.n();
        let mut xh = Vector::zeros(n + 1);
        xh.rows_mut(0, n).copy_from(x);
        xh[n] = b;
        Ok(xh)
    }
}

impl DynamicsModel for SafeSystem {
    fn state_dim(&self) -> usize {
        self.n() + 1
    }
    fn control_dim(&self) -> usize {
        self.plant.control_dim()
    }
    fn dt(&self) -> f64 {
        self.plant.dt()
    }

    fn step(&self, xh: &Vector, u: &Vector, theta: &Vector) -> Result<Vector> {
        let (x, b) = self.split(xh);
        let alpha = self.alpha.value(theta);
        let gamma = self.gamma.value(theta);
        let y = self.plant.step(&x, u, theta)?;
        let sy = aggregate_value(&*self.safety, self.kind, alpha, &y)?;
        let sx = aggregate_value(&*self.safety, self.kind, alpha, &x)?;
        let n = self.n();
        let mut out = Vector::zeros(n + 1);
        out.rows_mut(0, n).copy_from(&y);
        out[n] = sy - gamma * (sx - b);
        Ok(out)
    }

    fn jacobians(&self, xh: &Vector, u: &Vector, theta: &Vector) -> Result<(Matrix, Matrix)> {
        let (x, _) = self.split(xh);
        let n = self.n();
        let nu = self.control_dim();
        let alpha = self.alpha.value(theta);
        let gamma = self.gamma.value(theta);
        let y = self.plant.step(&x, u, theta)?;
        let (fx, fu) = self.plant.jacobians(&x, u, theta)?;
        let ay = aggregate(&*self.safety, self.kind, alpha, &y, false)?;
        let ax = aggregate(&*self.safety, self.kind, alpha, &x, false)?;

        let mut fxh = Matrix::zeros(n + 1, n + 1);
        fxh.view_mut((0, 0), (n, n)).copy_from(&fx);
        let row = fx.tr_mul(&ay.grad) - &ax.grad * gamma;
        fxh.view_mut((n, 0), (1, n)).copy_from(&row.transpose());
        fxh[(n, n)] = gamma;

        let mut fuh = Matrix::zeros(n + 1, nu);
        fuh.view_mut((0, 0), (n, nu)).copy_from(&fu);
        let row = fu.tr_mul(&ay.grad);
        fuh.view_mut((n, 0), (1, nu)).copy_from(&row.transpose());
        Ok((fxh, fuh))
    }

    fn param_jacobian(&self, xh: &Vector, u: &Vector, theta: &Vector) -> Result<Matrix> {
        let (x, b) = self.split(xh);
        let n = self.n();
        let nt = theta.len();
        let alpha = self.alpha.value(theta);
        let gamma = self.gamma.value(theta);
        let y = self.plant.step(&x, u, theta)?;
        let ft = self.plant.param_jacobian(&x, u, theta)?;
        let ay = aggregate(&*self.safety, self.kind, alpha, &y, false)?;
        let ax = aggregate(&*self.safety, self.kind, alpha, &x, false)?;

        let mut out = Matrix::zeros(n + 1, nt);
        out.view_mut((0, 0), (n, nt)).copy_from(&ft);
        let row = ft.tr_mul(&ay.grad);
        out.view_mut((n, 0), (1, nt)).copy_from(&row.transpose());
        if let Some(i) = self.gamma.index() {
            out[(n, i)] += -(ax.s - b);
        }
        if let Some(i) = self.alpha.index() {
            out[(n, i)] += ay.s_alpha - gamma * ax.s_alpha;
        }
        Ok(out)
    }

    fn second_order(
        &self,
        xh: &Vector,
        u: &Vector,
        theta: &Vector,
        w: &Vector,
    ) -> Result<SecondOrder> {
        let (x, _) = self.split(xh);
        let n = self.n();
        let nu = self.control_dim();
        let nt = theta.len();
        let alpha = self.alpha.value(theta);
        let gamma = self.gamma.value(theta);
        let wx = w.rows(0, n).into_owned();
        let wb = w[n];

        let y = self.plant.step(&x, u, theta)?;
        let (fx, fu) = self.plant.jacobians(&x, u, theta)?;
        let ft = self.plant.param_jacobian(&x, u, theta)?;
        let ay = aggregate(&*self.safety, self.kind, alpha, &y, true)?;
        let ax = aggregate(&*self.safety, self.kind, alpha, &x, true)?;
        let hy = ay.hess.as_ref().expect("hessian requested");
        let hx = ax.hess.as_ref().expect("hessian requested");

        let wt = &wx + &ay.grad * wb;
        let plant_so = if self.plant.is_linear() {
            SecondOrder::zeros(n, nu, nt)
        } else {
            self.plant.second_order(&x, u, theta, &wt)?
        };

        let mut so = SecondOrder::zeros(n + 1, nu, nt);
        let hfx = hy * &fx;
        let hfu = hy * &fu;
        let xx = &plant_so.xx + (fx.tr_mul(&hfx) - hx * gamma) * wb;
        let ux = &plant_so.ux + fu.tr_mul(&hfx) * wb;
        let uu = &plant_so.uu + fu.tr_mul(&hfu) * wb;
        so.xx.view_mut((0, 0), (n, n)).copy_from(&xx);
        so.ux.view_mut((0, 0), (nu, n)).copy_from(&ux);
        so.uu.copy_from(&uu);

        let hft = hy * &ft;
        let xt = &plant_so.xt + fx.tr_mul(&hft) * wb;
        let ut = &plant_so.ut + fu.tr_mul(&hft) * wb;
        so.xt.view_mut((0, 0), (n, nt)).copy_from(&xt);
        so.ut.copy_from(&ut);
        if let Some(i) = self.gamma.index() {
            for r in 0..n {
                so.xt[(r, i)] -= wb * ax.grad[r];
            }
            so.xt[(n, i)] += wb;
        }
        if let Some(i) = self.alpha.index() {
            let gx = fx.tr_mul(&ay.grad_alpha) - &ax.grad_alpha * gamma;
            let gu = fu.tr_mul(&ay.grad_alpha);
            for r in 0..n {
                so.xt[(r, i)] += wb * gx[r];
            }
            for r in 0..nu {
                so.ut[(r, i)] += wb * gu[r];
            }
        }
        Ok(so)
    }

    fn second_order_params(
        &self,
        xh: &Vector,
        u: &Vector,
        theta: &Vector,
        w: &Vector,
    ) -> Result<(Matrix, Matrix)> {
        let (x, _) = self.split(xh);
        let n = self.n();
        let nu = self.control_dim();
        let nt = theta.len();
        let alpha = self.alpha.value(theta);
        let gamma = self.gamma.value(theta);
        let wb = w[n];
        let ft = self.plant.param_jacobian(&x, u, theta)?;
        let plant_theta = ft.iter().any(|v| *v != 0.0);
        if !plant_theta && self.gamma.index().is_none() && self.alpha.index().is_none() {
            return Ok((Matrix::zeros(n + 1, nt), Matrix::zeros(nu, nt)));
        }
        if plant_theta {
            let so = self.second_order(xh, u, theta, w)?;
            return Ok((so.xt, so.ut));
        }
        let y = self.plant.step(&x, u, theta)?;
        let (fx, fu) = self.plant.jacobians(&x, u, theta)?;
        let ay = aggregate(&*self.safety, self.kind, alpha, &y, false)?;
        let ax = aggregate(&*self.safety, self.kind, alpha, &x, false)?;
        let mut xt = Matrix::zeros(n + 1, nt);
        let mut ut = Matrix::zeros(nu, nt);
        if let Some(i) = self.gamma.index() {
            for r in 0..n {
                xt[(r, i)] -= wb * ax.grad[r];
            }
            xt[(n, i)] += wb;
        }
        if let Some(i) = self.alpha.index() {
            let gx = fx.tr_mul(&ay.grad_alpha) - &ax.grad_alpha * gamma;
            let gu = fu.tr_mul(&ay.grad_alpha);
            for r in 0..n {
                xt[(r, i)] += wb * gx[r];
            }
            for r in 0..nu {
                ut[(r, i)] += wb * gu[r];
            }
        }
        Ok((xt, ut))
    }

    fn is_linear(&self) -> bool {
        self.plant.is_linear() && self.safety.n_constraints() == 0
    }
}
