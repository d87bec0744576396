//! 12-state quadrotor with Euler-angle attitude.
//!
//! State layout: position `p` (0..3), Euler angles `(roll, pitch, yaw)`
//! (3..6), world-frame linear velocity (6..9), body angular velocity (9..12).
//! Controls: collective thrust and three body moments. Rotation is
//! `Rz(yaw) Ry(pitch) Rx(roll)`.

use super::{DynamicsModel, Matrix, SecondOrder, Vector};
use crate::ad::{self, c, Scalar};
use crate::error::{Error, Result};

/// Distance from the Euler singularity treated as singular.
pub const PITCH_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Quadrotor {
    pub dt: f64,
    pub mass: f64,
    /// Diagonal of the body inertia.
    pub inertia: [f64; 3],
    pub gravity: f64,
}

impl Default for Quadrotor {
    fn default() -> Self {
        Quadrotor {
            dt: 0.02,
            mass: 1.0,
            inertia: [1.0; 3],
            gravity: 9.81,
        }
    }
}

const NONLINEAR_INPUTS: [usize; 7] = [3, 4, 5, 9, 10, 11, 12];

impl Quadrotor {
    /// Hover thrust.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    fn check_attitude(&self, pitch: f64) -> Result<()> {
        if pitch.abs() >= std::f64::consts::FRAC_PI_2 - PITCH_MARGIN || !pitch.is_finite() {
            return Err(Error::SingularAttitude { pitch });
        }
        Ok(())
    }

    /// Euler step over any scalar type; `z = (x, u)` stacked.
    pub fn step_generic<T: Scalar>(&self, z: &[T]) -> [T; 12] {
        let dt = self.dt;
        let [j1, j2, j3] = self.inertia;
        let (sphi, cphi) = z[3].sin_cos();
        let (sth, cth) = z[4].sin_cos();
        let (spsi, cpsi) = z[5].sin_cos();
        let tth = sth / cth;
        let (w1, w2, w3) = (z[9], z[10], z[11]);
        let thrust = z[12];

        let re3 = [
            cphi * sth * cpsi + sphi * spsi,
            cphi * sth * spsi - sphi * cpsi,
            cphi * cth,
        ];
        let eta_dot = [
            w1 + sphi * tth * w2 + cphi * tth * w3,
            cphi * w2 - sphi * w3,
            (sphi * w2 + cphi * w3) / cth,
        ];
        let gyro = [
            w2 * w3 * (j3 - j2),
            w3 * w1 * (j1 - j3),
            w1 * w2 * (j2 - j1),
        ];
        let inv_m = 1.0 / self.mass;
        let mut y = [c::<T>(0.0); 12];
        for i in 0..3 {
            y[i] = z[i] + z[6 + i] * dt;
            y[3 + i] = z[3 + i] + eta_dot[i] * dt;
        }
        y[6] = z[6] + thrust * re3[0] * (inv_m * dt);
        y[7] = z[7] + thrust * re3[1] * (inv_m * dt);
        y[8] = z[8] + (thrust * re3[2] * inv_m - self.gravity) * dt;
        let jd = [j1, j2, j3];
        for i in 0..3 {
            y[9 + i] = z[9 + i] + (z[13 + i] - gyro[i]) * (dt / jd[i]);
        }
        y
    }
}

/// One Euler step of the default (unit-parameter) quadrotor.
pub fn step_quadrotor(x: &[f64; 12], u: &[f64; 4], dt: f64) -> Result<[f64; 12]> {
    let q = Quadrotor {
        dt,
        ..Quadrotor::default()
    };
    q.check_attitude(x[4])?;
    let mut z = [0.0; 16];
    z[..12].copy_from_slice(x);
    z[12..].copy_from_slice(u);
    Ok(q.step_generic(&z))
}

impl DynamicsModel for Quadrotor {
    fn state_dim(&self) -> usize {
        12
    }
    fn control_dim(&self) -> usize {
        4
    }
    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, x: &Vector, u: &Vector, _theta: &Vector) -> Result<Vector> {
        self.check_attitude(x[4])?;
        let z: Vec<f64> = x.iter().chain(u.iter()).copied().collect();
        Ok(Vector::from_row_slice(&self.step_generic(&z)))
    }

    fn jacobians(&self, x: &Vector, u: &Vector, _theta: &Vector) -> Result<(Matrix, Matrix)> {
        self.check_attitude(x[4])?;
        let dt = self.dt;
        let [j1, j2, j3] = self.inertia;
        let (sphi, cphi) = x[3].sin_cos();
        let (sth, cth) = x[4].sin_cos();
        let (spsi, cpsi) = x[5].sin_cos();
        let tth = sth / cth;
        let (w1, w2, w3) = (x[9], x[10], x[11]);
        let thrust = u[0];

        let mut fx = Matrix::identity(12, 12);
        let mut fu = Matrix::zeros(12, 4);
        for i in 0..3 {
            fx[(i, 6 + i)] = dt;
        }

        // attitude kinematics
        let a = sphi * w2 + cphi * w3;
        fx[(3, 3)] += dt * (cphi * tth * w2 - sphi * tth * w3);
        fx[(4, 3)] += dt * (-sphi * w2 - cphi * w3);
        fx[(5, 3)] += dt * (cphi * w2 - sphi * w3) / cth;
        fx[(3, 4)] += dt * a / (cth * cth);
        fx[(5, 4)] += dt * a * sth / (cth * cth);
        let w_mat = [
            [1.0, sphi * tth, cphi * tth],
            [0.0, cphi, -sphi],
            [0.0, sphi / cth, cphi / cth],
        ];
        for r in 0..3 {
            for col in 0..3 {
                fx[(3 + r, 9 + col)] = dt * w_mat[r][col];
            }
        }

        // translational
        let re3 = [
            cphi * sth * cpsi + sphi * spsi,
            cphi * sth * spsi - sphi * cpsi,
            cphi * cth,
        ];
        let d_phi = [
            -sphi * sth * cpsi + cphi * spsi,
            -sphi * sth * spsi - cphi * cpsi,
            -sphi * cth,
        ];
        let d_th = [cphi * cth * cpsi, cphi * cth * spsi, -cphi * sth];
        let d_psi = [
            -cphi * sth * spsi + sphi * cpsi,
            cphi * sth * cpsi + sphi * spsi,
            0.0,
        ];
        let k = dt * thrust / self.mass;
        for r in 0..3 {
            fx[(6 + r, 3)] = k * d_phi[r];
            fx[(6 + r, 4)] = k * d_th[r];
            fx[(6 + r, 5)] = k * d_psi[r];
            fu[(6 + r, 0)] = dt * re3[r] / self.mass;
        }

        // rotational
        let dgyro = [
            [0.0, (j3 - j2) * w3, (j3 - j2) * w2],
            [(j1 - j3) * w3, 0.0, (j1 - j3) * w1],
            [(j2 - j1) * w2, (j2 - j1) * w1, 0.0],
        ];
        let jd = [j1, j2, j3];
        for r in 0..3 {
            for col in 0..3 {
                fx[(9 + r, 9 + col)] -= dt * dgyro[r][col] / jd[r];
            }
            fu[(9 + r, 1 + r)] = dt / jd[r];
        }
        Ok((fx, fu))
    }

    fn second_order(
        &self,
        x: &Vector,
        u: &Vector,
        theta: &Vector,
        w: &Vector,
    ) -> Result<SecondOrder> {
        self.check_attitude(x[4])?;
        let z: Vec<f64> = x.iter().chain(u.iter()).copied().collect();
        let h = ad::hessian_subset(&z, &NONLINEAR_INPUTS, |v| {
            let y = self.step_generic(v);
            let mut s = c(0.0);
            for i in 0..12 {
                if w[i] != 0.0 {
                    s += y[i] * w[i];
                }
            }
            s
        });
        Ok(SecondOrder::from_joint(&h, 12, 4, theta.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::jacobian_fd_error;
    use num_dual::Dual64;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng) -> (Vector, Vector) {
        let mut x = Vector::from_fn(12, |_, _| rng.random_range(-2.0..2.0));
        for i in 3..6 {
            x[i] = rng.random_range(-1.0..1.0);
        }
        let u = Vector::from_fn(4, |i, _| {
            if i == 0 {
                rng.random_range(0.0..50.0)
            } else {
                rng.random_range(-10.0..10.0)
            }
        });
        (x, u)
    }

    #[test]
    fn hover_keeps_position() {
        let mut x = [0.0; 12];
        x[0] = 1.0;
        let y = step_quadrotor(&x, &[9.81, 0.0, 0.0, 0.0], 0.02).unwrap();
        for i in 0..12 {
            assert!((y[i] - x[i]).abs() < 1e-12, "state {i}");
        }
    }

    #[test]
    fn free_fall_loses_g_dt() {
        let y = step_quadrotor(&[0.0; 12], &[0.0; 4], 0.02).unwrap();
        assert!((y[8] + 9.81 * 0.02).abs() < 1e-15);
        assert_eq!(y[2], 0.0);
    }

    #[test]
    fn singular_pitch_is_rejected() {
        let mut x = [0.0; 12];
        x[4] = std::f64::consts::FRAC_PI_2 - 1e-4;
        assert!(matches!(
            step_quadrotor(&x, &[0.0; 4], 0.02),
            Err(Error::SingularAttitude { .. })
        ));
    }

    #[test]
    fn jacobians_match_central_differences() {
        let m = Quadrotor {
            inertia: [1.0, 1.3, 0.7],
            ..Quadrotor::default()
        };
        let th = Vector::zeros(0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (x, u) = random_state(&mut rng);
            let e = jacobian_fd_error(&m, &x, &u, &th, 1e-6).unwrap();
            assert!(e < 1e-5, "fd error {e}");
        }
    }

    #[test]
    fn jacobians_match_dual_numbers() {
        let m = Quadrotor {
            inertia: [1.0, 1.3, 0.7],
            ..Quadrotor::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, u) = random_state(&mut rng);
        let z: Vec<f64> = x.iter().chain(u.iter()).copied().collect();
        let jac = ad::jacobian(&z, 12, |v: &[Dual64]| m.step_generic(v).to_vec());
        let (fx, fu) = m.jacobians(&x, &u, &Vector::zeros(0)).unwrap();
        assert!((jac.columns(0, 12) - fx).amax() < 1e-13);
        assert!((jac.columns(12, 4) - fu).amax() < 1e-13);
    }

    #[test]
    fn second_order_matches_fd_of_jacobian() {
        let m = Quadrotor::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, u) = random_state(&mut rng);
        let w = Vector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let th = Vector::zeros(0);
        let so = m.second_order(&x, &u, &th, &w).unwrap();
        let h = 1e-6;
        for j in 0..16 {
            let (mut xp, mut up) = (x.clone(), u.clone());
            let (mut xm, mut um) = (x.clone(), u.clone());
            if j < 12 {
                xp[j] += h;
                xm[j] -= h;
            } else {
                up[j - 12] += h;
                um[j - 12] -= h;
            }
            let (fxp, fup) = m.jacobians(&xp, &up, &th).unwrap();
            let (fxm, fum) = m.jacobians(&xm, &um, &th).unwrap();
            let gx = (fxp - fxm).transpose() * &w / (2.0 * h);
            let gu = (fup - fum).transpose() * &w / (2.0 * h);
            for i in 0..12 {
                let a = if j < 12 {
                    so.xx[(i, j)]
                } else {
                    so.ux[(j - 12, i)]
                };
                assert!((a - gx[i]).abs() < 1e-6, "xx/ux ({i},{j})");
            }
            for i in 0..4 {
                let a = if j < 12 {
                    so.ux[(i, j)]
                } else {
                    so.uu[(i, j - 12)]
                };
                assert!((a - gu[i]).abs() < 1e-6, "ux/uu ({i},{j})");
            }
        }
    }
}
