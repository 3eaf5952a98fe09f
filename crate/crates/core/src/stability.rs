//! Linear stability of the two schemes on the scalar model problem
//! `rho0 V' = -lambda U - c-coupled pressure`, through the spectral radius
//! of the amplification matrix `A1^{-1} A0`.

use nalgebra::Matrix4;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::Scheme;
use crate::scalar::Real;

/// Stability threshold on the spectral radius.
pub const RHO_TOL: f64 = 1e-9;
/// Bisection bracket of `max_stable_dt`.
pub const DT_BRACKET: (f64, f64) = (1e-8, 1e2);

/// Model parameters: deviatoric bound `lambda = 4 mu / (rho0 h^2)`,
/// volumetric bound `c`, and the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplificationModel<T> {
    pub scheme: Scheme,
    pub lambda: T,
    pub c: T,
    pub dt: T,
}

impl<T: Real> AmplificationModel<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > T::zero()) {
            return Err(Error::Domain(format!("lambda = {} must be positive", self.lambda)));
        }
        if !(self.c >= T::zero()) {
            return Err(Error::Domain(format!("c = {} must be nonnegative", self.c)));
        }
        if !(self.dt > T::zero()) {
            return Err(Error::Domain(format!("dt = {} must be positive", self.dt)));
        }
        Ok(())
    }
}

pub type Mat4<T> = [[T; 4]; 4];

/// `(A1, A0)` with `A1 x^{n+1} = A0 x^n`, `x^n = (V^n, V^{n-1}, U^n, U^{n-1})`.
pub fn amplification_pair<T: Real>(m: &AmplificationModel<T>) -> (Mat4<T>, Mat4<T>) {
    let (o, z) = (T::one(), T::zero());
    let third = T::lit(1.0 / 3.0);
    let two3 = T::lit(2.0 / 3.0);
    let four3 = T::lit(4.0 / 3.0);
    let dt = m.dt;
    let a1 = [
        [o, z, two3 * dt * m.c, z],
        [z, o, z, z],
        [-two3 * dt, z, o, z],
        [z, z, z, o],
    ];
    let first = match m.scheme {
        Scheme::Msbdf2 => [four3, -third, -four3 * dt * m.lambda, two3 * dt * m.lambda],
        Scheme::Febdf2 => [two3 * (T::lit(2.0) - dt * dt * m.lambda), -third, -two3 * dt * m.lambda, z],
    };
    let a0 = [first, [o, z, z, z], [z, z, four3, -third], [z, z, o, z]];
    (a1, a0)
}

fn to_na<T: Real>(a: &Mat4<T>) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| a[i][j].as_f64())
}

/// Eigenvalues `(re, im)` of `A1^{-1} A0`.
pub fn eigenvalues<T: Real>(a1: &Mat4<T>, a0: &Mat4<T>) -> Result<Vec<(T, T)>> {
    let a1 = to_na(a1);
    let a1_inv = a1
        .try_inverse()
        .filter(|m| m.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Singular("A1 is not invertible".into()))?;
    let m = a1_inv * to_na(a0);
    Ok(m.complex_eigenvalues().iter().map(|z| (T::lit(z.re), T::lit(z.im))).collect())
}

/// `max |eig(A1^{-1} A0)|`.
pub fn spectral_radius<T: Real>(a1: &Mat4<T>, a0: &Mat4<T>) -> Result<T> {
    Ok(eigenvalues(a1, a0)?
        .into_iter()
        .map(|(re, im)| re.hypot(im))
        .fold(T::zero(), T::max))
}

/// Spectral radius of the model problem.
pub fn model_spectral_radius<T: Real>(m: &AmplificationModel<T>) -> Result<T> {
    m.validate()?;
    let (a1, a0) = amplification_pair(m);
    spectral_radius(&a1, &a0)
}

fn is_stable<T: Real>(scheme: Scheme, lambda: T, c: T, dt: T) -> Result<(bool, T)> {
    let rho = model_spectral_radius(&AmplificationModel { scheme, lambda, c, dt })?;
    Ok((rho <= T::one() + T::lit(RHO_TOL), rho))
}

/// Largest stable step in the bracket `[1e-8, 1e2]`.
///
/// The bracket is scanned on a logarithmic grid for the first unstable
/// step, which is then refined by bisection until the interval is below
/// `tol_dt` relative to its lower end. Returns infinity when no grid point
/// is unstable.
pub fn max_stable_dt<T: Real>(scheme: Scheme, lambda: T, c: T, tol_dt: T) -> Result<T> {
    if !(tol_dt > T::zero()) {
        return Err(Error::Domain(format!("tolerance {tol_dt} must be positive")));
    }
    let (lo, hi) = (T::lit(DT_BRACKET.0), T::lit(DT_BRACKET.1));
    let (ok, rho) = is_stable(scheme, lambda, c, lo)?;
    if !ok {
        return Err(Error::UnconditionallyUnstable(rho.as_f64()));
    }
    let n = 2000;
    let ratio = (hi / lo).powf(T::one() / T::from_count(n));
    let mut prev = lo;
    for k in 1..=n {
        let dt = if k == n { hi } else { lo * ratio.powi(k as i32) };
        if !is_stable(scheme, lambda, c, dt)?.0 {
            let (mut a, mut b) = (prev, dt);
            while b - a > tol_dt * a {
                let mid = T::lit(0.5) * (a + b);
                if is_stable(scheme, lambda, c, mid)?.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return Ok(a);
        }
        prev = dt;
    }
    Ok(T::infinity())
}

/// One point of a spectral-radius sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint<T> {
    pub lambda: T,
    pub c: T,
    pub dt: T,
    pub rho: T,
}

/// Spectral radii over all `(lambda, c_multiple * lambda, dt)` tuples.
pub fn sweep<T: Real>(scheme: Scheme, lambdas: &[T], c_multiples: &[T], dts: &[T]) -> Result<Vec<SweepPoint<T>>> {
    let mut tuples = Vec::new();
    for &l in lambdas {
        for &cm in c_multiples {
            for &dt in dts {
                tuples.push((l, cm * l, dt));
            }
        }
    }
    tuples
        .into_par_iter()
        .map(|(lambda, c, dt)| {
            let rho = model_spectral_radius(&AmplificationModel { scheme, lambda, c, dt })?;
            Ok(SweepPoint { lambda, c, dt, rho })
        })
        .collect()
}

/// `n` logarithmically spaced points on `[a, b]`.
pub fn log_grid<T: Real>(a: T, b: T, n: usize) -> Vec<T> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|k| (la + (lb - la) * T::from_count(k) / T::from_count(n - 1)).exp())
        .collect()
}
