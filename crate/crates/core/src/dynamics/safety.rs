//! Safety functions: each constraint `h_i(x) > 0` means safe.

use serde::{Deserialize, Serialize};

use super::arm::ArmKinematics;
use super::{Matrix, Vector};

/// One constraint value with its derivatives.
#[derive(Debug, Clone)]
pub struct ConstraintEval {
    pub value: f64,
    pub grad: Vector,
    /// Present when requested.
    pub hess: Option<Matrix>,
}

/// A set of smooth constraints over the plant state.
pub trait SafetyFunction: Send + Sync {
    fn state_dim(&self) -> usize;
    fn n_constraints(&self) -> usize;
    /// Constraint values `h_i(x)`.
    fn values(&self, x: &Vector) -> Vec<f64>;
    /// Values with gradients and optionally Hessians.
    fn evaluate(&self, x: &Vector, hessians: bool) -> Vec<ConstraintEval>;
    fn description(&self) -> String;

    /// Tightest constraint: `min_i h_i(x)`, `+inf` without constraints.
    fn h(&self, x: &Vector) -> f64 {
        self.values(x).into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Gradient of the active branch of `h`.
    fn grad_h(&self, x: &Vector) -> Vector {
        let evals = self.evaluate(x, false);
        evals
            .into_iter()
            .min_by(|a, b| a.value.total_cmp(&b.value))
            .map(|e| e.grad)
            .unwrap_or_else(|| Vector::zeros(self.state_dim()))
    }
}

/// Ball (2-D disc or 3-D sphere) obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// `min_i (|p - c_i|^2 - r_i^2)`.
pub fn obstacle_h(p: &[f64], obstacles: &[Obstacle]) -> f64 {
    obstacles
        .iter()
        .map(|o| sphere_h(p, o))
        .fold(f64::INFINITY, f64::min)
}

fn sphere_h(p: &[f64], o: &Obstacle) -> f64 {
    let d2: f64 = p
        .iter()
        .zip(&o.center)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    d2 - o.radius * o.radius
}

/// Balls in a position subspace, plus optional per-axis box limits.
#[derive(Debug, Clone)]
pub struct ObstacleField {
    pub n_x: usize,
    pub position: Vec<usize>,
    pub obstacles: Vec<Obstacle>,
    /// Box `lo <= p_i <= hi` on every position coordinate.
    pub bounds: Option<(f64, f64)>,
}

impl ObstacleField {
    pub fn new(n_x: usize, position: Vec<usize>, obstacles: Vec<Obstacle>) -> Self {
        ObstacleField {
            n_x,
            position,
            obstacles,
            bounds: None,
        }
    }

    fn pos(&self, x: &Vector) -> Vec<f64> {
        self.position.iter().map(|&i| x[i]).collect()
    }
}

impl SafetyFunction for ObstacleField {
    fn state_dim(&self) -> usize {
        self.n_x
    }

    fn n_constraints(&self) -> usize {
        self.obstacles.len() + self.bounds.map_or(0, |_| 2 * self.position.len())
    }

    fn values(&self, x: &Vector) -> Vec<f64> {
        let p = self.pos(x);
        let mut v: Vec<f64> = self.obstacles.iter().map(|o| sphere_h(&p, o)).collect();
        if let Some((lo, hi)) = self.bounds {
            for &pi in &p {
                v.push(pi - lo);
                v.push(hi - pi);
            }
        }
        v
    }

    fn evaluate(&self, x: &Vector, hessians: bool) -> Vec<ConstraintEval> {
        let p = self.pos(x);
        let mut out = Vec::with_capacity(self.n_constraints());
        for o in &self.obstacles {
            let mut grad = Vector::zeros(self.n_x);
            for (k, &i) in self.position.iter().enumerate() {
                grad[i] = 2.0 * (p[k] - o.center[k]);
            }
            let hess = hessians.then(|| {
                let mut h = Matrix::zeros(self.n_x, self.n_x);
                for &i in &self.position {
                    h[(i, i)] = 2.0;
                }
                h
            });
            out.push(ConstraintEval {
                value: sphere_h(&p, o),
                grad,
                hess,
            });
        }
        if let Some((lo, hi)) = self.bounds {
            for (k, &i) in self.position.iter().enumerate() {
                for (value, sign) in [(p[k] - lo, 1.0), (hi - p[k], -1.0)] {
                    let mut grad = Vector::zeros(self.n_x);
                    grad[i] = sign;
                    let hess = hessians.then(|| Matrix::zeros(self.n_x, self.n_x));
                    out.push(ConstraintEval { value, grad, hess });
                }
            }
        }
        out
    }

    fn description(&self) -> String {
        format!(
            "{} ball obstacles over state indices {:?}",
            self.obstacles.len(),
            self.position
        )
    }
}

/// Vertical cylinders and the ground plane, checked on sampled arm points.
///
/// The base point is skipped; it sits on the ground by construction.
#[derive(Debug, Clone)]
pub struct ArmSafety {
    pub kinematics: ArmKinematics,
    /// `(x, y)` centre and radius.
    pub cylinders: Vec<Obstacle>,
    pub ground: bool,
    /// Plant state dimension (angles occupy the first six entries).
    pub n_x: usize,
}

impl ArmSafety {
    pub fn new(cylinders: Vec<Obstacle>, ground: bool) -> Self {
        ArmSafety {
            kinematics: ArmKinematics::default(),
            cylinders,
            ground,
            n_x: 12,
        }
    }
}

impl SafetyFunction for ArmSafety {
    fn state_dim(&self) -> usize {
        self.n_x
    }

    fn n_constraints(&self) -> usize {
        let pts = self.kinematics.n_points() - 1;
        pts * (self.cylinders.len() + usize::from(self.ground))
    }

    fn values(&self, x: &Vector) -> Vec<f64> {
        let pts = self.kinematics.points(&x.as_slice()[..6]);
        let mut v = Vec::with_capacity(self.n_constraints());
        for p in &pts[1..] {
            for o in &self.cylinders {
                v.push(sphere_h(&p[..2], o));
            }
            if self.ground {
                v.push(p[2]);
            }
        }
        v
    }

    fn evaluate(&self, x: &Vector, hessians: bool) -> Vec<ConstraintEval> {
        let derivs = self.kinematics.point_derivatives(&x.as_slice()[..6]);
        let mut out = Vec::with_capacity(self.n_constraints());
        let embed_grad = |g6: Vector| {
            let mut g = Vector::zeros(self.n_x);
            g.rows_mut(0, 6).copy_from(&g6);
            g
        };
        let embed_hess = |h6: Matrix| {
            let mut h = Matrix::zeros(self.n_x, self.n_x);
            h.view_mut((0, 0), (6, 6)).copy_from(&h6);
            h
        };
        for d in &derivs[1..] {
            for o in &self.cylinders {
                let dx = d.p[0] - o.center[0];
                let dy = d.p[1] - o.center[1];
                let jx = d.jac.row(0).transpose();
                let jy = d.jac.row(1).transpose();
                let g6 = &jx * (2.0 * dx) + &jy * (2.0 * dy);
                let hess = hessians.then(|| {
                    let h6 = (&jx * jx.transpose() + &jy * jy.transpose()) * 2.0
                        + &d.hess[0] * (2.0 * dx)
                        + &d.hess[1] * (2.0 * dy);
                    embed_hess(h6)
                });
                out.push(ConstraintEval {
                    value: dx * dx + dy * dy - o.radius * o.radius,
                    grad: embed_grad(g6),
                    hess,
                });
            }
            if self.ground {
                let hess = hessians.then(|| embed_hess(d.hess[2].clone()));
                out.push(ConstraintEval {
                    value: d.p[2],
                    grad: embed_grad(d.jac.row(2).transpose()),
                    hess,
                });
            }
        }
        out
    }

    fn description(&self) -> String {
        format!(
            "{} vertical cylinders{} on {} arm points",
            self.cylinders.len(),
            if self.ground { " and ground plane" } else { "" },
            self.kinematics.n_points() - 1
        )
    }
}

/// No constraints at all.
#[derive(Debug, Clone)]
pub struct Unconstrained {
    pub n_x: usize,
}

impl SafetyFunction for Unconstrained {
    fn state_dim(&self) -> usize {
        self.n_x
    }
    fn n_constraints(&self) -> usize {
        0
    }
    fn values(&self, _x: &Vector) -> Vec<f64> {
        Vec::new()
    }
    fn evaluate(&self, _x: &Vector, _hessians: bool) -> Vec<ConstraintEval> {
        Vec::new()
    }
    fn description(&self) -> String {
        "no constraints".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::fd_jacobian;
    use proptest::prelude::*;

    fn ball(center: &[f64], r: f64) -> Obstacle {
        Obstacle {
            center: center.to_vec(),
            radius: r,
        }
    }

    #[test]
    fn centre_gives_minus_r_squared() {
        assert_eq!(obstacle_h(&[1.0, 2.0], &[ball(&[1.0, 2.0], 0.5)]), -0.25);
    }

    #[test]
    fn two_radii_away_gives_three_r_squared() {
        let r = 0.7;
        let h = obstacle_h(&[2.0 * r, 0.0, 0.0], &[ball(&[0.0, 0.0, 0.0], r)]);
        assert!((h - 3.0 * r * r).abs() < 1e-15);
    }

    fn check_grads(s: &dyn SafetyFunction, x: &Vector) {
        let evals = s.evaluate(x, true);
        let n = evals.len();
        let fd = fd_jacobian(x, |y| Vector::from_vec(s.values(y)), 1e-6);
        for (i, e) in evals.iter().enumerate() {
            let row = fd.row(i).transpose();
            assert!(
                (&e.grad - &row).amax() < 1e-5 * (1.0 + e.grad.amax()),
                "grad {i}"
            );
        }
        // Hessians against fd of the analytic gradients
        let mut hfd = vec![Matrix::zeros(x.len(), x.len()); n];
        let h = 1e-6;
        for j in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += h;
            xm[j] -= h;
            let ep = s.evaluate(&xp, false);
            let em = s.evaluate(&xm, false);
            for i in 0..n {
                hfd[i].set_column(j, &((&ep[i].grad - &em[i].grad) / (2.0 * h)));
            }
        }
        for i in 0..n {
            let a = evals[i].hess.as_ref().unwrap();
            assert!((a - &hfd[i]).amax() < 1e-5 * (1.0 + a.amax()), "hess {i}");
        }
    }

    #[test]
    fn obstacle_field_derivatives_match_fd() {
        let mut f = ObstacleField::new(
            12,
            vec![0, 1, 2],
            vec![ball(&[1.0, 2.0, 3.0], 0.5), ball(&[5.0, 5.0, 5.0], 1.5)],
        );
        f.bounds = Some((-2.0, 12.0));
        let x = Vector::from_fn(12, |i, _| 0.3 * i as f64);
        check_grads(&f, &x);
        assert_eq!(f.values(&x).len(), f.n_constraints());
    }

    #[test]
    fn arm_safety_derivatives_match_fd() {
        let s = ArmSafety::new(vec![ball(&[1.0, 0.0], 0.5), ball(&[2.0, 2.0], 0.5)], true);
        let x = Vector::from_fn(12, |i, _| {
            [0.4, 0.6, -0.3, 0.2, 0.8, -0.4][i % 6] * (1.0 - 0.5 * (i / 6) as f64)
        });
        check_grads(&s, &x);
        assert_eq!(s.values(&x).len(), s.n_constraints());
    }

    #[test]
    fn grad_h_follows_tightest_constraint() {
        let f = ObstacleField::new(
            2,
            vec![0, 1],
            vec![ball(&[0.0, 0.0], 1.0), ball(&[3.0, 0.0], 1.0)],
        );
        let x = Vector::from_vec(vec![2.2, 0.0]);
        let g = f.grad_h(&x);
        assert!((g[0] - 2.0 * (2.2 - 3.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn obstacle_h_is_lipschitz_on_bounded_region(
            px in -5.0..15.0f64, py in -5.0..15.0f64,
            dx in -1e-3..1e-3f64, dy in -1e-3..1e-3f64,
        ) {
            let obs = vec![ball(&[3.0, 6.0], 1.5), ball(&[7.0, 4.0], 1.0)];
            // |grad| <= 2 max |p - c| over the probe region
            let lip = 2.0 * ((20.0f64).powi(2) * 2.0).sqrt();
            let a = obstacle_h(&[px, py], &obs);
            let b = obstacle_h(&[px + dx, py + dy], &obs);
            prop_assert!((a - b).abs() <= lip * (dx * dx + dy * dy).sqrt() + 1e-12);
        }
    }
}
