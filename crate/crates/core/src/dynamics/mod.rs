//! Discrete-time dynamics, safety functions and disturbances.

pub mod arm;
pub mod disturbance;
pub mod dubins;
pub mod quadrotor;
pub mod safety;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Contraction `sum_i w_i * Hess f_i` of the dynamics second derivatives,
/// split into the blocks the solvers consume.
#[derive(Debug, Clone)]
pub struct SecondOrder {
    pub xx: Matrix,
    pub ux: Matrix,
    pub uu: Matrix,
    /// `d2/dx dtheta`, shape `n_x x n_theta`.
    pub xt: Matrix,
    /// `d2/du dtheta`, shape `n_u x n_theta`.
    pub ut: Matrix,
}

impl SecondOrder {
    pub fn zeros(nx: usize, nu: usize, nt: usize) -> Self {
        SecondOrder {
            xx: Matrix::zeros(nx, nx),
            ux: Matrix::zeros(nu, nx),
            uu: Matrix::zeros(nu, nu),
            xt: Matrix::zeros(nx, nt),
            ut: Matrix::zeros(nu, nt),
        }
    }

    /// Split a Hessian over the stacked input `(x, u)`.
    pub fn from_joint(h: &Matrix, nx: usize, nu: usize, nt: usize) -> Self {
        SecondOrder {
            xx: h.view((0, 0), (nx, nx)).into_owned(),
            ux: h.view((nx, 0), (nu, nx)).into_owned(),
            uu: h.view((nx, nx), (nu, nu)).into_owned(),
            xt: Matrix::zeros(nx, nt),
            ut: Matrix::zeros(nu, nt),
        }
    }
}

/// A discrete-time model `x' = f(x, u, theta)`.
///
/// `theta` is always the full parameter vector of the enclosing problem;
/// models that depend on it know which entries they read.
pub trait DynamicsModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn dt(&self) -> f64;

    fn step(&self, x: &Vector, u: &Vector, theta: &Vector) -> Result<Vector>;

    /// `(f_x, f_u)` at `(x, u)`.
    fn jacobians(&self, x: &Vector, u: &Vector, theta: &Vector) -> Result<(Matrix, Matrix)>;

    /// `f_theta`, shape `n_x x n_theta`.
    fn param_jacobian(&self, _x: &Vector, _u: &Vector, theta: &Vector) -> Result<Matrix> {
        Ok(Matrix::zeros(self.state_dim(), theta.len()))
    }

    /// Second derivatives contracted with `w` (length `n_x`).
    fn second_order(
        &self,
        _x: &Vector,
        _u: &Vector,
        theta: &Vector,
        _w: &Vector,
    ) -> Result<SecondOrder> {
        Ok(SecondOrder::zeros(
            self.state_dim(),
            self.control_dim(),
            theta.len(),
        ))
    }

    /// Only the `theta` cross blocks `(xt, ut)` of [`DynamicsModel::second_order`].
    /// The default assumes they vanish; models whose derivatives depend on
    /// `theta` must override it.
    fn second_order_params(
        &self,
        _x: &Vector,
        _u: &Vector,
        theta: &Vector,
        _w: &Vector,
    ) -> Result<(Matrix, Matrix)> {
        Ok((
            Matrix::zeros(self.state_dim(), theta.len()),
            Matrix::zeros(self.control_dim(), theta.len()),
        ))
    }

    /// True when all second derivatives vanish identically.
    fn is_linear(&self) -> bool {
        false
    }
}

/// Box limits on the controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "bounds: {} lower vs {} upper",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Config("control bounds need lower < upper".into()));
        }
        Ok(ControlBounds { lower, upper })
    }

    pub fn symmetric(limits: &[f64]) -> Result<Self> {
        Self::new(limits.iter().map(|l| -l).collect(), limits.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, u: &mut Vector) {
        for i in 0..u.len() {
            u[i] = u[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn at_lower(&self, u: &Vector, i: usize) -> bool {
        u[i] <= self.lower[i]
    }

    pub fn at_upper(&self, u: &Vector, i: usize) -> bool {
        u[i] >= self.upper[i]
    }
}

/// `x' = A x + B u + c + theta[drift..drift+n_x]` (drift optional).
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Vector,
    pub drift_index: Option<usize>,
    pub dt: f64,
}

impl LinearModel {
    pub fn new(a: Matrix, b: Matrix) -> Self {
        let n = a.nrows();
        LinearModel {
            a,
            b,
            c: Vector::zeros(n),
            drift_index: None,
            dt: 1.0,
        }
    }
}

impl DynamicsModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn step(&self, x: &Vector, u: &Vector, theta: &Vector) -> Result<Vector> {
        let mut y = &self.a * x + &self.b * u + &self.c;
        if let Some(d) = self.drift_index {
            y += theta.rows(d, y.len());
        }
        Ok(y)
    }
    fn jacobians(&self, _x: &Vector, _u: &Vector, _theta: &Vector) -> Result<(Matrix, Matrix)> {
        Ok((self.a.clone(), self.b.clone()))
    }
    fn param_jacobian(&self, _x: &Vector, _u: &Vector, theta: &Vector) -> Result<Matrix> {
        let n = self.state_dim();
        let mut ft = Matrix::zeros(n, theta.len());
        if let Some(d) = self.drift_index {
            for i in 0..n {
                ft[(i, d + i)] = 1.0;
            }
        }
        Ok(ft)
    }
    fn is_linear(&self) -> bool {
        true
    }
}

/// Check a model's analytic Jacobians against central differences.
/// Returns the largest relative error over `f_x` and `f_u`.
pub fn jacobian_fd_error(
    model: &dyn DynamicsModel,
    x: &Vector,
    u: &Vector,
    theta: &Vector,
    rel_step: f64,
) -> Result<f64> {
    let (fx, fu) = model.jacobians(x, u, theta)?;
    let nx = x.len();
    let z = Vector::from_iterator(nx + u.len(), x.iter().chain(u.iter()).copied());
    let fd = crate::ad::fd_jacobian(
        &z,
        |z| {
            model
                .step(
                    &z.rows(0, nx).into_owned(),
                    &z.rows(nx, z.len() - nx).into_owned(),
                    theta,
                )
                .unwrap_or_else(|_| Vector::from_element(nx, f64::NAN))
        },
        rel_step,
    );
    let mut worst: f64 = 0.0;
    for i in 0..nx {
        for j in 0..z.len() {
            let a = if j < nx { fx[(i, j)] } else { fu[(i, j - nx)] };
            let e = (a - fd[(i, j)]).abs() / (1.0 + a.abs());
            worst = worst.max(e);
        }
    }
    Ok(worst)
}
