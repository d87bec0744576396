//! Three-link arm as a 6-joint double integrator.
//!
//! Joint order is `(yaw_1, pitch_1, yaw_2, pitch_2, yaw_3, pitch_3)`; the state
//! is `(angles, rates)` and the controls are joint accelerations. At zero
//! angles every link points along +x. Link `i` is rotated by
//! `R_i = R_{i-1} Rz(yaw_i) Ry(-pitch_i)`, so positive pitch lifts the link
//! towards +z, and its far end is `p_i = p_{i-1} + L_i R_i e_x`.

use num_dual::HyperDual64;

use super::{DynamicsModel, Matrix, Vector};
use crate::ad::{self, c, Scalar};
use crate::error::Result;

pub const LINK_LENGTHS: [f64; 3] = [1.0, 1.5, 1.0];

#[derive(Debug, Clone)]
pub struct RobotArm {
    pub dt: f64,
}

impl Default for RobotArm {
    fn default() -> Self {
        RobotArm { dt: 0.02 }
    }
}

/// One Euler step of the double integrator.
pub fn step_robot_arm(x: &[f64; 12], u: &[f64; 6], dt: f64) -> [f64; 12] {
    let mut y = *x;
    for i in 0..6 {
        y[i] = x[i] + dt * x[6 + i];
        y[6 + i] = x[6 + i] + dt * u[i];
    }
    y
}

impl DynamicsModel for RobotArm {
    fn state_dim(&self) -> usize {
        12
    }
    fn control_dim(&self) -> usize {
        6
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn step(&self, x: &Vector, u: &Vector, _theta: &Vector) -> Result<Vector> {
        let mut y = x.clone();
        for i in 0..6 {
            y[i] += self.dt * x[6 + i];
            y[6 + i] += self.dt * u[i];
        }
        Ok(y)
    }
    fn jacobians(&self, _x: &Vector, _u: &Vector, _theta: &Vector) -> Result<(Matrix, Matrix)> {
        let mut fx = Matrix::identity(12, 12);
        let mut fu = Matrix::zeros(12, 6);
        for i in 0..6 {
            fx[(i, 6 + i)] = self.dt;
            fu[(6 + i, i)] = self.dt;
        }
        Ok((fx, fu))
    }
    fn is_linear(&self) -> bool {
        true
    }
}

/// Forward kinematics with `samples` points per link.
#[derive(Debug, Clone)]
pub struct ArmKinematics {
    pub lengths: [f64; 3],
    pub samples_per_link: usize,
}

impl Default for ArmKinematics {
    fn default() -> Self {
        ArmKinematics {
            lengths: LINK_LENGTHS,
            samples_per_link: 4,
        }
    }
}

fn mat_mul<T: Scalar>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut m = [[c::<T>(0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    m
}

/// `Rz(yaw) Ry(-pitch)`.
fn joint_rotation<T: Scalar>(yaw: T, pitch: T) -> [[T; 3]; 3] {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let z = c::<T>(0.0);
    // Ry(-p) = [[cp, 0, -sp], [0, 1, 0], [sp, 0, cp]]
    let rz = [[cy, -sy, z], [sy, cy, z], [z, z, c(1.0)]];
    let ry = [[cp, z, -sp], [z, c(1.0), z], [sp, z, cp]];
    mat_mul(&rz, &ry)
}

impl ArmKinematics {
    /// Number of points returned by [`ArmKinematics::points`]: the base plus
    /// `samples_per_link` points on each link, the last being the end effector.
    pub fn n_points(&self) -> usize {
        1 + 3 * self.samples_per_link
    }

    /// Base, sampled link points and end effector (last entry).
    pub fn points<T: Scalar>(&self, q: &[T]) -> Vec<[T; 3]> {
        let z = c::<T>(0.0);
        let mut rot = [[c::<T>(1.0), z, z], [z, c(1.0), z], [z, z, c(1.0)]];
        let mut base = [z; 3];
        let mut pts = Vec::with_capacity(self.n_points());
        pts.push(base);
        let s = self.samples_per_link;
        for link in 0..3 {
            rot = mat_mul(&rot, &joint_rotation(q[2 * link], q[2 * link + 1]));
            let dir = [rot[0][0], rot[1][0], rot[2][0]];
            for j in 1..=s {
                let t = self.lengths[link] * j as f64 / s as f64;
                pts.push([
                    base[0] + dir[0] * t,
                    base[1] + dir[1] * t,
                    base[2] + dir[2] * t,
                ]);
            }
            base = *pts.last().unwrap();
        }
        pts
    }

    pub fn end_effector<T: Scalar>(&self, q: &[T]) -> [T; 3] {
        *self.points(q).last().unwrap()
    }

    /// End-effector Jacobian (3 x 6).
    pub fn ee_jacobian(&self, q: &[f64]) -> Matrix {
        ad::jacobian(&q[..6], 3, |v| self.end_effector(v).to_vec())
    }

    /// Value, Jacobian (3 x 6) and coordinate Hessians (6 x 6) of every point.
    pub fn point_derivatives(&self, q: &[f64]) -> Vec<PointDerivatives> {
        let np = self.n_points();
        let mut out: Vec<PointDerivatives> = self
            .points(&q[..6])
            .into_iter()
            .map(|p| PointDerivatives {
                p,
                jac: Matrix::zeros(3, 6),
                hess: std::array::from_fn(|_| Matrix::zeros(6, 6)),
            })
            .collect();
        let mut qh: Vec<HyperDual64> = q[..6].iter().map(|&v| HyperDual64::from_re(v)).collect();
        for a in 0..6 {
            for b in a..6 {
                qh[a].eps1 = 1.0;
                qh[b].eps2 = 1.0;
                let pts = self.points(&qh);
                for k in 0..np {
                    for d in 0..3 {
                        let v = pts[k][d].eps1eps2;
                        out[k].hess[d][(a, b)] = v;
                        out[k].hess[d][(b, a)] = v;
                        if a == b {
                            out[k].jac[(d, a)] = pts[k][d].eps1;
                        }
                    }
                }
                qh[a].eps1 = 0.0;
                qh[b].eps2 = 0.0;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PointDerivatives {
    pub p: [f64; 3],
    pub jac: Matrix,
    pub hess: [Matrix; 3],
}

/// End effector and sampled link points (base first) for the default arm.
pub fn arm_forward_kinematics(angles: &[f64; 6]) -> ([f64; 3], Vec<[f64; 3]>) {
    let k = ArmKinematics::default();
    let pts = k.points(angles);
    (*pts.last().unwrap(), pts)
}
