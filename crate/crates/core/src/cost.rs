//! Parameterized quadratic tracking costs.
//!
//! Running cost `sum_i q_i (s_i(x) - sbar_i)^2 + sum_j r_j (u_j - ubar_j)^2 + q_b b^2`,
//! terminal cost with `qf` (or `q` when no separate terminal weights exist).
//! Weights are read from `theta` through a [`ParamLayout`].

use crate::barrier::ParamRef;
use crate::dynamics::arm::ArmKinematics;
use crate::dynamics::{Matrix, Vector};

#[derive(Debug, Clone)]
pub struct RunningDerivs {
    pub l: f64,
    pub lx: Vector,
    pub lu: Vector,
    pub lxx: Matrix,
    pub lux: Matrix,
    pub luu: Matrix,
    /// `d2 l / dx dtheta`, `n_x x n_theta`.
    pub lxt: Matrix,
    /// `d2 l / du dtheta`, `n_u x n_theta`.
    pub lut: Matrix,
}

#[derive(Debug, Clone)]
pub struct TerminalDerivs {
    pub v: f64,
    pub vx: Vector,
    pub vxx: Matrix,
    pub vxt: Matrix,
}

pub trait CostModel: Send + Sync {
    fn running(&self, k: usize, x: &Vector, u: &Vector, theta: &Vector) -> f64;
    fn running_derivs(&self, k: usize, x: &Vector, u: &Vector, theta: &Vector) -> RunningDerivs;
    fn terminal(&self, x: &Vector, theta: &Vector) -> f64;
    fn terminal_derivs(&self, x: &Vector, theta: &Vector) -> TerminalDerivs;
}

/// Where each weight block lives in `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamLayout {
    pub q: usize,
    pub r: usize,
    /// `None` reuses `q` in the terminal cost.
    pub qf: Option<usize>,
    pub q_b: ParamRef,
}

/// The tracked quantity `s(x)`.
#[derive(Debug, Clone)]
pub enum Features {
    /// The first `n` state entries.
    Identity(usize),
    /// End-effector position of the arm (angles are `x[0..6]`).
    ArmEndEffector(ArmKinematics),
}

impl Features {
    pub fn dim(&self) -> usize {
        match self {
            Features::Identity(n) => *n,
            Features::ArmEndEffector(_) => 3,
        }
    }

    pub fn value(&self, x: &Vector) -> Vector {
        match self {
            Features::Identity(n) => x.rows(0, *n).into_owned(),
            Features::ArmEndEffector(k) => {
                Vector::from_row_slice(&k.end_effector(&x.as_slice()[..6]))
            }
        }
    }

    /// Value, Jacobian (`dim x n_x`) and per-feature Hessians (empty when linear).
    fn eval(&self, x: &Vector, hessians: bool) -> (Vector, Matrix, Vec<Matrix>) {
        let nx = x.len();
        match self {
            Features::Identity(n) => {
                let mut j = Matrix::zeros(*n, nx);
                for i in 0..*n {
                    j[(i, i)] = 1.0;
                }
                (x.rows(0, *n).into_owned(), j, Vec::new())
            }
            Features::ArmEndEffector(k) => {
                let q = &x.as_slice()[..6];
                let mut j = Matrix::zeros(3, nx);
                if hessians {
                    let d = k.point_derivatives(q).pop().expect("end effector");
                    j.view_mut((0, 0), (3, 6)).copy_from(&d.jac);
                    let hs = d
                        .hess
                        .iter()
                        .map(|h6| {
                            let mut h = Matrix::zeros(nx, nx);
                            h.view_mut((0, 0), (6, 6)).copy_from(h6);
                            h
                        })
                        .collect();
                    (Vector::from_row_slice(&d.p), j, hs)
                } else {
                    j.view_mut((0, 0), (3, 6)).copy_from(&k.ee_jacobian(q));
                    (self.value(x), j, Vec::new())
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrackingCost {
    pub features: Features,
    pub n_u: usize,
    /// Index of the barrier state, if the model carries one.
    pub b_index: Option<usize>,
    /// Feature references, `N + 1` entries.
    pub s_ref: Vec<Vector>,
    /// Control references, `N` entries.
    pub u_ref: Vec<Vector>,
    pub layout: ParamLayout,
}

impl TrackingCost {
    /// Constant references over a horizon.
    pub fn constant(
        features: Features,
        n_u: usize,
        b_index: Option<usize>,
        s_target: Vector,
        u_target: Vector,
        horizon: usize,
        layout: ParamLayout,
    ) -> Self {
        TrackingCost {
            features,
            n_u,
            b_index,
            s_ref: vec![s_target; horizon + 1],
            u_ref: vec![u_target; horizon],
            layout,
        }
    }

    pub fn n_s(&self) -> usize {
        self.features.dim()
    }

    fn q<'a>(&self, theta: &'a Vector) -> nalgebra::DVectorView<'a, f64> {
        theta.rows(self.layout.q, self.n_s())
    }

    fn r<'a>(&self, theta: &'a Vector) -> nalgebra::DVectorView<'a, f64> {
        theta.rows(self.layout.r, self.n_u)
    }

    fn qf_start(&self) -> usize {
        self.layout.qf.unwrap_or(self.layout.q)
    }

    fn barrier(&self, x: &Vector) -> f64 {
        self.b_index.map_or(0.0, |i| x[i])
    }

    /// Partial derivatives of the running/terminal Lagrangian with respect
    /// to the references, contracted with a state/control variation:
    /// returns `(d/d sbar_k, d/d ubar_k)` of `l_x dx + l_u du`.
    pub fn reference_sensitivity(
        &self,
        k: usize,
        x: &Vector,
        dx: &Vector,
        du: Option<&Vector>,
        theta: &Vector,
    ) -> (Vector, Vector) {
        let (_, j, _) = self.features.eval(x, false);
        let w = if du.is_some() {
            self.q(theta).into_owned()
        } else {
            theta.rows(self.qf_start(), self.n_s()).into_owned()
        };
        let _ = k;
        let ds = -2.0 * w.component_mul(&(j * dx));
        let du_ref = match du {
            Some(du) => -2.0 * self.r(theta).component_mul(du),
            None => Vector::zeros(self.n_u),
        };
        (ds, du_ref)
    }

    fn state_part(
        &self,
        x: &Vector,
        sref: &Vector,
        wstart: usize,
        theta: &Vector,
        nt: usize,
    ) -> (f64, Vector, Matrix, Matrix) {
        let nx = x.len();
        let ns = self.n_s();
        let w = theta.rows(wstart, ns);
        let (s, j, hs) = self.features.eval(x, true);
        let e = s - sref;
        let we = w.component_mul(&e);
        let mut l = e.dot(&we);
        let mut lx = j.tr_mul(&we) * 2.0;
        let mut wj = j.clone();
        for i in 0..ns {
            wj.row_mut(i).scale_mut(w[i]);
        }
        let mut lxx = j.tr_mul(&wj) * 2.0;
        for (i, h) in hs.iter().enumerate() {
            lxx += h * (2.0 * we[i]);
        }
        let mut lxt = Matrix::zeros(nx, nt);
        for i in 0..ns {
            let col = j.row(i).transpose() * (2.0 * e[i]);
            let mut dst = lxt.column_mut(wstart + i);
            dst += &col;
        }
        if let Some(bi) = self.b_index {
            let qb = self.layout.q_b.value(theta);
            let b = x[bi];
            l += qb * b * b;
            lx[bi] += 2.0 * qb * b;
            lxx[(bi, bi)] += 2.0 * qb;
            if let Some(ti) = self.layout.q_b.index() {
                lxt[(bi, ti)] += 2.0 * b;
            }
        }
        (l, lx, lxx, lxt)
    }
}

impl CostModel for TrackingCost {
    fn running(&self, k: usize, x: &Vector, u: &Vector, theta: &Vector) -> f64 {
        let e = self.features.value(x) - &self.s_ref[k];
        let d = u - &self.u_ref[k];
        let b = self.barrier(x);
        e.dot(&self.q(theta).component_mul(&e))
            + d.dot(&self.r(theta).component_mul(&d))
            + self.layout.q_b.value(theta) * b * b
    }

    fn running_derivs(&self, k: usize, x: &Vector, u: &Vector, theta: &Vector) -> RunningDerivs {
        let nt = theta.len();
        let nu = self.n_u;
        let (ls, lx, lxx, lxt) = self.state_part(x, &self.s_ref[k], self.layout.q, theta, nt);
        let r = self.r(theta);
        let d = u - &self.u_ref[k];
        let rd = r.component_mul(&d);
        let mut luu = Matrix::zeros(nu, nu);
        let mut lut = Matrix::zeros(nu, nt);
        for j in 0..nu {
            luu[(j, j)] = 2.0 * r[j];
            lut[(j, self.layout.r + j)] = 2.0 * d[j];
        }
        RunningDerivs {
            l: ls + d.dot(&rd),
            lx,
            lu: rd * 2.0,
            lxx,
            lux: Matrix::zeros(nu, x.len()),
            luu,
            lxt,
            lut,
        }
    }

    fn terminal(&self, x: &Vector, theta: &Vector) -> f64 {
        let e = self.features.value(x) - self.s_ref.last().expect("references");
        let qf = theta.rows(self.qf_start(), self.n_s());
        let b = self.barrier(x);
        e.dot(&qf.component_mul(&e)) + self.layout.q_b.value(theta) * b * b
    }

    fn terminal_derivs(&self, x: &Vector, theta: &Vector) -> TerminalDerivs {
        let sref = self.s_ref.last().expect("references");
        let (v, vx, vxx, vxt) = self.state_part(x, sref, self.qf_start(), theta, theta.len());
        TerminalDerivs { v, vx, vxx, vxt }
    }
}
