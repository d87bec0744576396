//! Parameterized finite-horizon optimal control problems.

use std::sync::Arc;

use crate::cost::CostModel;
use crate::dynamics::{ControlBounds, DynamicsModel, Matrix, Vector};
use crate::error::{Error, Result};

/// Initial condition `x_0 = xi(theta)`.
#[derive(Debug, Clone)]
pub enum InitialState {
    Fixed(Vector),
    /// `x_0 = base + theta[start..start + n_x]`.
    Offset {
        base: Vector,
        start: usize,
    },
}

impl InitialState {
    pub fn x0(&self, theta: &Vector) -> Vector {
        match self {
            InitialState::Fixed(x) => x.clone(),
            InitialState::Offset { base, start } => base + theta.rows(*start, base.len()),
        }
    }

    /// `xi_theta`, shape `n_x x n_theta`.
    pub fn jacobian(&self, n_x: usize, n_theta: usize) -> Matrix {
        let mut j = Matrix::zeros(n_x, n_theta);
        if let InitialState::Offset { start, .. } = self {
            for i in 0..n_x {
                j[(i, start + i)] = 1.0;
            }
        }
        j
    }
}

/// State and control sequences `(x_0, u_0, ..., x_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub xs: Vec<Vector>,
    pub us: Vec<Vector>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.us.len()
    }

    /// Stack `(x_0, u_0, x_1, ..., u_{N-1}, x_N)` into one vector.
    pub fn stacked(&self) -> Vector {
        let mut v = Vec::new();
        for k in 0..self.us.len() {
            v.extend_from_slice(self.xs[k].as_slice());
            v.extend_from_slice(self.us[k].as_slice());
        }
        v.extend_from_slice(self.xs.last().expect("nonempty").as_slice());
        Vector::from_vec(v)
    }
}

#[derive(Clone)]
pub struct OCProblem {
    pub model: Arc<dyn DynamicsModel>,
    pub cost: Arc<dyn CostModel>,
    pub init: InitialState,
    pub theta: Vector,
    pub horizon: usize,
    pub bounds: Option<ControlBounds>,
}

impl OCProblem {
    pub fn n_x(&self) -> usize {
        self.model.state_dim()
    }

    pub fn n_u(&self) -> usize {
        self.model.control_dim()
    }

    pub fn n_theta(&self) -> usize {
        self.theta.len()
    }

    pub fn x0(&self) -> Vector {
        self.init.x0(&self.theta)
    }

    pub fn with_theta(&self, theta: Vector) -> OCProblem {
        OCProblem {
            theta,
            ..self.clone()
        }
    }

    /// Roll controls forward from `x_0`.
    pub fn rollout(&self, us: &[Vector]) -> Result<Vec<Vector>> {
        if us.len() != self.horizon {
            return Err(Error::HorizonMismatch {
                left: us.len(),
                right: self.horizon,
            });
        }
        let mut xs = Vec::with_capacity(self.horizon + 1);
        xs.push(self.x0());
        for (k, u) in us.iter().enumerate() {
            let y = self
                .model
                .step(&xs[k], u, &self.theta)
                .map_err(|_| Error::NonFiniteState { step: k + 1 })?;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { step: k + 1 });
            }
            xs.push(y);
        }
        Ok(xs)
    }

    pub fn trajectory(&self, us: Vec<Vector>) -> Result<Trajectory> {
        let xs = self.rollout(&us)?;
        Ok(Trajectory { xs, us })
    }

    pub fn total_cost(&self, traj: &Trajectory) -> f64 {
        let mut j = 0.0;
        for k in 0..self.horizon {
            j += self.cost.running(k, &traj.xs[k], &traj.us[k], &self.theta);
        }
        j + self.cost.terminal(&traj.xs[self.horizon], &self.theta)
    }

    /// Clamp controls into the bounds, if any.
    pub fn clamp(&self, u: &mut Vector) {
        if let Some(b) = &self.bounds {
            b.clamp(u);
        }
    }
}

/// Component `i` of `u` is pinned at a bound with the gradient pushing
/// outward. Zero gradients count as inactive.
pub fn is_active(bounds: Option<&ControlBounds>, u: &Vector, grad: &Vector, i: usize) -> bool {
    match bounds {
        None => false,
        Some(b) => (b.at_lower(u, i) && grad[i] > 0.0) || (b.at_upper(u, i) && grad[i] < 0.0),
    }
}

pub fn active_set(bounds: Option<&ControlBounds>, u: &Vector, grad: &Vector) -> Vec<bool> {
    (0..u.len())
        .map(|i| is_active(bounds, u, grad, i))
        .collect()
}
