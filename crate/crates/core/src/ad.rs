//! Forward-mode AD helpers on top of `num-dual`.
//!
//! Models write their maps once, generic over [`Scalar`], and use these
//! helpers for Jacobians (dual numbers) and Hessians of scalar
//! contractions (hyper-dual numbers).

use nalgebra::{DMatrix, DVector};
use num_dual::{Dual64, DualNum, HyperDual64};

/// Scalar usable by generic model code: `f64`, `Dual64`, `HyperDual64`.
pub trait Scalar: DualNum<Primitive = f64> + Copy {}
impl<T: DualNum<Primitive = f64> + Copy> Scalar for T {}

/// Lift a constant into a scalar type.
#[inline]
pub fn c<T: Scalar>(v: f64) -> T {
    T::from(v)
}

/// Jacobian of `f: R^n -> R^m` at `z`, one dual pass per input.
pub fn jacobian<F>(z: &[f64], m: usize, f: F) -> DMatrix<f64>
where
    F: Fn(&[Dual64]) -> Vec<Dual64>,
{
    let n = z.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut zd: Vec<Dual64> = z.iter().map(|&v| Dual64::from_re(v)).collect();
    for j in 0..n {
        zd[j] = Dual64::new(z[j], 1.0);
        let out = f(&zd);
        for (i, o) in out.iter().enumerate() {
            jac[(i, j)] = o.eps;
        }
        zd[j] = Dual64::from_re(z[j]);
    }
    jac
}

/// Hessian of scalar `f: R^n -> R` at `z`, restricted to the listed
/// input indices (all other second derivatives are taken as zero).
pub fn hessian_subset<F>(z: &[f64], idx: &[usize], f: F) -> DMatrix<f64>
where
    F: Fn(&[HyperDual64]) -> HyperDual64,
{
    let n = z.len();
    let mut hess = DMatrix::zeros(n, n);
    let mut zh: Vec<HyperDual64> = z.iter().map(|&v| HyperDual64::from_re(v)).collect();
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a..] {
            zh[i].eps1 = 1.0;
            zh[j].eps2 = 1.0;
            let v = f(&zh).eps1eps2;
            hess[(i, j)] = v;
            hess[(j, i)] = v;
            zh[i].eps1 = 0.0;
            zh[j].eps2 = 0.0;
        }
    }
    hess
}

/// Full Hessian of a scalar function.
pub fn hessian<F>(z: &[f64], f: F) -> DMatrix<f64>
where
    F: Fn(&[HyperDual64]) -> HyperDual64,
{
    let idx: Vec<usize> = (0..z.len()).collect();
    hessian_subset(z, &idx, f)
}

/// Central-difference Jacobian, used by tests and by debugging tools.
pub fn fd_jacobian<F>(z: &DVector<f64>, f: F, rel_step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let f0 = f(z);
    let mut jac = DMatrix::zeros(f0.len(), z.len());
    let mut zp = z.clone();
    for j in 0..z.len() {
        let h = rel_step * (1.0 + z[j].abs());
        zp[j] = z[j] + h;
        let fp = f(&zp);
        zp[j] = z[j] - h;
        let fm = f(&zp);
        zp[j] = z[j];
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    jac
}
