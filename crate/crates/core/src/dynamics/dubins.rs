//! Unicycle (Dubins vehicle) with state `(p_x, p_y, yaw)` and controls `(v, omega)`.

use super::{DynamicsModel, Matrix, SecondOrder, Vector};
use crate::error::Result;

/// One Euler step of the unicycle.
pub fn step_dubins(x: &[f64; 3], u: &[f64; 2], dt: f64) -> [f64; 3] {
    let (s, c) = x[2].sin_cos();
    [x[0] + dt * u[0] * c, x[1] + dt * u[0] * s, x[2] + dt * u[1]]
}

#[derive(Debug, Clone)]
pub struct Dubins {
    pub dt: f64,
}

impl Default for Dubins {
    fn default() -> Self {
        Dubins { dt: 0.01 }
    }
}

impl DynamicsModel for Dubins {
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, x: &Vector, u: &Vector, _theta: &Vector) -> Result<Vector> {
        let y = step_dubins(&[x[0], x[1], x[2]], &[u[0], u[1]], self.dt);
        Ok(Vector::from_row_slice(&y))
    }

    fn jacobians(&self, x: &Vector, u: &Vector, _theta: &Vector) -> Result<(Matrix, Matrix)> {
        let (s, c) = x[2].sin_cos();
        let dt = self.dt;
        let mut fx = Matrix::identity(3, 3);
        fx[(0, 2)] = -dt * u[0] * s;
        fx[(1, 2)] = dt * u[0] * c;
        let mut fu = Matrix::zeros(3, 2);
        fu[(0, 0)] = dt * c;
        fu[(1, 0)] = dt * s;
        fu[(2, 1)] = dt;
        Ok((fx, fu))
    }

    fn second_order(
        &self,
        x: &Vector,
        u: &Vector,
        theta: &Vector,
        w: &Vector,
    ) -> Result<SecondOrder> {
        let (s, c) = x[2].sin_cos();
        let dt = self.dt;
        let mut so = SecondOrder::zeros(3, 2, theta.len());
        so.xx[(2, 2)] = dt * u[0] * (-c * w[0] - s * w[1]);
        so.ux[(0, 2)] = dt * (-s * w[0] + c * w[1]);
        Ok(so)
    }
}
