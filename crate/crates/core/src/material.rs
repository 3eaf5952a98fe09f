//! Modified Neo-Hookean constitutive law with two volumetric energies.
//!
//! The bulk modulus may be infinite (fully incompressible material). All
//! quantities that enter the discrete system are therefore also offered in a
//! form divided by the bulk modulus, which stays finite in that limit.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{self, Mat3};

/// Volumetric strain energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VolumetricModel {
    /// `kappa/2 (J-1)^2`
    #[default]
    Quadratic,
    /// `kappa (J ln J - J + 1)`, constant instantaneous bulk modulus.
    Liu,
}

impl std::str::FromStr for VolumetricModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quadratic" | "q" => Ok(Self::Quadratic),
            "liu" | "l" => Ok(Self::Liu),
            other => Err(Error::Config(format!("unknown volumetric model '{other}'"))),
        }
    }
}

/// Constitutive constants. `kappa` is `+inf` for an incompressible material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams<T> {
    pub young: T,
    pub nu: T,
    pub mu: T,
    pub kappa: T,
    pub rho0: T,
    pub vol_model: VolumetricModel,
    pub kappa_scale: T,
}

/// Shear and bulk moduli from Young's modulus and Poisson's ratio.
///
/// `kappa_scale` multiplies the bulk modulus after evaluation; the bulk
/// modulus is infinite at `nu = 0.5` regardless of the scale.
pub fn moduli_from_e_nu<T: Real>(young: T, nu: T, kappa_scale: T) -> Result<(T, T)> {
    let half = T::lit(0.5);
    if !(nu >= T::zero() && nu <= half) {
        return Err(Error::Domain(format!("Poisson ratio {nu} outside [0, 0.5]")));
    }
    if !(young > T::zero()) {
        return Err(Error::Domain(format!("Young's modulus {young} must be positive")));
    }
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let mu = young / (two * (T::one() + nu));
    let kappa = if nu == half {
        T::infinity()
    } else {
        kappa_scale * young / (three * (T::one() - two * nu))
    };
    Ok((mu, kappa))
}

impl<T: Real> MaterialParams<T> {
    pub fn from_e_nu(young: T, nu: T, rho0: T, vol_model: VolumetricModel, kappa_scale: T) -> Result<Self> {
        let (mu, kappa) = moduli_from_e_nu(young, nu, kappa_scale)?;
        let p = Self {
            young,
            nu,
            mu,
            kappa,
            rho0,
            vol_model,
            kappa_scale,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > T::zero()) {
            return Err(Error::Domain(format!("shear modulus {} must be positive", self.mu)));
        }
        if !(self.rho0 > T::zero()) {
            return Err(Error::Domain(format!("density {} must be positive", self.rho0)));
        }
        if !(self.kappa > T::zero()) {
            return Err(Error::Domain(format!("bulk modulus {} must be positive", self.kappa)));
        }
        if self.kappa.is_infinite() != (self.nu == T::lit(0.5)) {
            return Err(Error::Domain("bulk modulus is infinite iff nu = 0.5".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn is_incompressible(&self) -> bool {
        self.kappa.is_infinite()
    }

    /// `1/kappa`, exactly zero for the incompressible limit.
    #[inline]
    pub fn inv_kappa(&self) -> T {
        if self.is_incompressible() {
            T::zero()
        } else {
            T::one() / self.kappa
        }
    }
}

/// Per-point kinematic bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics<T> {
    /// Deformation gradient, 3x3 (unit out-of-plane stretch in 2D).
    pub f: Mat3<T>,
    pub j: T,
    /// Cofactor `J F^{-T}`.
    pub h: Mat3<T>,
    /// `F : F`, including the out-of-plane `+1` in 2D.
    pub f_norm2: T,
    /// `Fbar : Fbar = J^{-2/3} F : F`; NaN when `J <= 0`.
    pub fbar_norm2: T,
}

/// `F = I + grad U`. Pass a 2D gradient with zero third row and column.
pub fn kinematics<T: Real>(grad_u: &Mat3<T>) -> Kinematics<T> {
    let mut f = *grad_u;
    for (i, row) in f.iter_mut().enumerate() {
        row[i] += T::one();
    }
    let j = tensor::det(&f);
    let h = tensor::cofactor(&f);
    let f_norm2 = tensor::ddot(&f, &f);
    let fbar_norm2 = if j > T::zero() {
        j.powf(T::lit(-2.0 / 3.0)) * f_norm2
    } else {
        T::nan()
    };
    Kinematics {
        f,
        j,
        h,
        f_norm2,
        fbar_norm2,
    }
}

/// Deviatoric energy density and PK1 stress.
pub fn deviatoric_pk1<T: Real>(kin: &Kinematics<T>, mu: T) -> Result<(T, Mat3<T>)> {
    if !(kin.j > T::zero()) {
        return Err(Error::Domain(format!("J = {} is not positive", kin.j)));
    }
    let third = T::lit(1.0 / 3.0);
    let jm23 = kin.j.powf(T::lit(-2.0 / 3.0));
    let w = T::lit(0.5) * mu * (jm23 * kin.f_norm2 - T::lit(3.0));
    let inv_j = T::one() / kin.j;
    let mut p = tensor::zero();
    for a in 0..3 {
        for b in 0..3 {
            // F^{-T} = H / J
            p[a][b] = mu * jm23 * (kin.f[a][b] - third * kin.f_norm2 * kin.h[a][b] * inv_j);
        }
    }
    Ok((w, p))
}

/// `(W, W_J, W_JJ)` of a volumetric energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumetricDerivatives<T> {
    pub w: T,
    pub w_j: T,
    pub w_jj: T,
}

/// Volumetric energy and derivatives divided by `kappa`. Finite for every
/// admissible `J` regardless of the bulk modulus.
pub fn volumetric_scaled<T: Real>(j: T, model: VolumetricModel) -> Result<VolumetricDerivatives<T>> {
    match model {
        VolumetricModel::Quadratic => {
            let d = j - T::one();
            Ok(VolumetricDerivatives {
                w: T::lit(0.5) * d * d,
                w_j: d,
                w_jj: T::one(),
            })
        }
        VolumetricModel::Liu => {
            if !(j > T::zero()) {
                return Err(Error::Domain(format!("Liu volumetric energy needs J > 0, got {j}")));
            }
            let ln = j.ln();
            Ok(VolumetricDerivatives {
                w: j * ln - j + T::one(),
                w_j: ln,
                w_jj: T::one() / j,
            })
        }
    }
}

/// Volumetric energy and derivatives for a finite bulk modulus.
pub fn volumetric_derivatives<T: Real>(j: T, kappa: T, model: VolumetricModel) -> Result<VolumetricDerivatives<T>> {
    if kappa.is_infinite() {
        return Err(Error::Domain(
            "infinite bulk modulus: use the kappa-divided forms".into(),
        ));
    }
    let s = volumetric_scaled(j, model)?;
    Ok(VolumetricDerivatives {
        w: kappa * s.w,
        w_j: kappa * s.w_j,
        w_jj: kappa * s.w_jj,
    })
}

/// Shear and bulk wave speeds `(c_mu, c_kappa)`; `c_kappa` is `+inf` for an
/// incompressible material.
pub fn wave_speeds<T: Real>(params: &MaterialParams<T>, j: T) -> Result<(T, T)> {
    params.validate()?;
    if !(j > T::zero()) {
        return Err(Error::Domain(format!("J = {j} is not positive")));
    }
    let c_mu = (params.mu / params.rho0).sqrt();
    if params.is_incompressible() {
        return Ok((c_mu, T::infinity()));
    }
    let vol = volumetric_derivatives(j, params.kappa, params.vol_model)?;
    let kappa_inst = j * vol.w_jj;
    let c_kappa = ((kappa_inst + T::lit(4.0 / 3.0) * params.mu) / params.rho0).sqrt();
    Ok((c_mu, c_kappa))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grad2(a: [[f64; 2]; 2]) -> Mat3<f64> {
        let mut g = tensor::zero();
        for i in 0..2 {
            for j in 0..2 {
                g[i][j] = a[i][j];
            }
        }
        g
    }

    #[test]
    fn moduli_reference_values() {
        let (mu, kappa) = moduli_from_e_nu(100.0, 0.4, 1.0).unwrap();
        assert_relative_eq!(mu, 35.714, epsilon = 1e-3);
        assert_relative_eq!(kappa, 166.67, epsilon = 1e-2);
        let (mu, _) = moduli_from_e_nu(2500.0, 0.49, 1.0).unwrap();
        assert_relative_eq!(mu, 838.93, epsilon = 1e-2);
        let (_, kappa) = moduli_from_e_nu(100.0f64, 0.5, 1.0).unwrap();
        assert!(kappa.is_infinite());
        let (_, kappa) = moduli_from_e_nu(100.0, 0.4, 2.0).unwrap();
        assert_relative_eq!(kappa, 333.33, epsilon = 1e-2);
    }

    #[test]
    fn moduli_reject_bad_poisson() {
        assert!(matches!(moduli_from_e_nu(1.0, 0.6, 1.0), Err(Error::Domain(_))));
        assert!(matches!(moduli_from_e_nu(1.0, -0.1, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn params_invariants() {
        let p = MaterialParams::from_e_nu(100.0, 0.5, 1.0, VolumetricModel::Quadratic, 1.0).unwrap();
        assert!(p.is_incompressible());
        assert_eq!(p.inv_kappa(), 0.0);
        let mut bad = p;
        bad.nu = 0.4;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn kinematics_examples() {
        let k = kinematics(&tensor::zero::<f64>());
        assert_eq!(k.f, tensor::identity());
        assert_eq!(k.j, 1.0);
        assert_eq!(k.h, tensor::identity());
        assert_eq!(k.f_norm2, 3.0);

        let k = kinematics(&grad2([[1.0, 0.0], [0.0, 0.0]]));
        assert_eq!(k.j, 2.0);
        assert_eq!(k.h[0][0], 1.0);
        assert_eq!(k.h[1][1], 2.0);
        // in-plane F:F = 4 + 1, plus the unit out-of-plane stretch
        assert_eq!(k.f_norm2, 6.0);

        let k = kinematics(&grad2([[0.0, 0.3], [0.0, 0.0]]));
        assert_relative_eq!(k.j, 1.0);
        assert_relative_eq!(k.h[0][0], 1.0);
        assert_relative_eq!(k.h[0][1], 0.0);
        assert_relative_eq!(k.h[1][0], -0.3);
        assert_relative_eq!(k.h[1][1], 1.0);
    }

    #[test]
    fn deviatoric_examples() {
        let (w, p) = deviatoric_pk1(&kinematics(&tensor::zero::<f64>()), 2.0).unwrap();
        assert_eq!(w, 0.0);
        for row in p {
            for x in row {
                assert!(x.abs() < 1e-15);
            }
        }
        let mut g = tensor::zero();
        g[0][0] = 1.0;
        g[1][1] = -0.5;
        let (w, _) = deviatoric_pk1(&kinematics(&g), 3.0).unwrap();
        assert_relative_eq!(w, 1.125 * 3.0, epsilon = 1e-14);
    }

    #[test]
    fn deviatoric_rejects_inverted() {
        let mut g = tensor::zero();
        g[0][0] = -2.0;
        assert!(deviatoric_pk1(&kinematics(&g), 1.0).is_err());
    }

    #[test]
    fn volumetric_examples() {
        for model in [VolumetricModel::Quadratic, VolumetricModel::Liu] {
            let d = volumetric_derivatives(1.0, 7.0, model).unwrap();
            assert_eq!((d.w, d.w_j, d.w_jj), (0.0, 0.0, 7.0));
        }
        let d = volumetric_derivatives(2.0, 10.0, VolumetricModel::Liu).unwrap();
        assert_relative_eq!(d.w_j, 6.931471805599453, epsilon = 1e-12);
        assert_relative_eq!(d.w_jj, 5.0);
        assert!(volumetric_derivatives(0.0, 1.0, VolumetricModel::Liu).is_err());
        assert!(volumetric_derivatives(-1.0, 1.0, VolumetricModel::Quadratic).is_ok());
        assert!(volumetric_derivatives(1.0, f64::INFINITY, VolumetricModel::Quadratic).is_err());
    }

    #[test]
    fn wave_speed_reference_values() {
        let p = MaterialParams::from_e_nu(2500.0, 0.4, 0.1, VolumetricModel::Liu, 2.0).unwrap();
        let (c_mu, _) = wave_speeds(&p, 1.0).unwrap();
        assert_relative_eq!(c_mu, 94.49, epsilon = 5e-3);
        let p = MaterialParams::from_e_nu(1.2e7, 0.4, 1.1, VolumetricModel::Liu, 2.0).unwrap();
        let (c_mu, _) = wave_speeds(&p, 1.0).unwrap();
        assert_relative_eq!(c_mu, 1974.0, epsilon = 0.5);
        let p = MaterialParams::from_e_nu(100.0, 0.4, 1.0, VolumetricModel::Liu, 2.0).unwrap();
        let (_, c_kappa) = wave_speeds(&p, 1.0).unwrap();
        assert_relative_eq!(c_kappa, 19.518, epsilon = 1e-3);
        let p = MaterialParams::from_e_nu(100.0f64, 0.5, 1.0, VolumetricModel::Liu, 2.0).unwrap();
        assert!(wave_speeds(&p, 1.0).unwrap().1.is_infinite());
    }

    fn gradient_strategy() -> impl Strategy<Value = Mat3<f64>> {
        proptest::array::uniform3(proptest::array::uniform3(-0.3..0.3f64))
    }

    proptest! {
        #[test]
        fn pk1_is_energy_gradient(g in gradient_strategy(), mu in 0.5..5.0f64) {
            let kin = kinematics(&g);
            prop_assume!(kin.j > 0.2);
            let (_, p) = deviatoric_pk1(&kin, mu).unwrap();
            let h = 1e-5;
            for a in 0..3 {
                for b in 0..3 {
                    let mut gp = g;
                    gp[a][b] += h;
                    let mut gm = g;
                    gm[a][b] -= h;
                    let wp = deviatoric_pk1(&kinematics(&gp), mu).unwrap().0;
                    let wm = deviatoric_pk1(&kinematics(&gm), mu).unwrap().0;
                    let fd = (wp - wm) / (2.0 * h);
                    prop_assert!((fd - p[a][b]).abs() <= 1e-6 * (1.0 + p[a][b].abs()));
                }
            }
        }

        #[test]
        fn det_gradient_is_cofactor(g in gradient_strategy()) {
            let kin = kinematics(&g);
            let h = 1e-5;
            for a in 0..3 {
                for b in 0..3 {
                    let mut gp = g;
                    gp[a][b] += h;
                    let mut gm = g;
                    gm[a][b] -= h;
                    let fd = (kinematics(&gp).j - kinematics(&gm).j) / (2.0 * h);
                    prop_assert!((fd - kin.h[a][b]).abs() <= 1e-6);
                }
            }
        }

        #[test]
        fn isochoric_power_vanishes(g in gradient_strategy(), mu in 0.5..5.0f64) {
            let mut f = g;
            for (i, row) in f.iter_mut().enumerate() { row[i] += 1.0; }
            let d = tensor::det(&f);
            prop_assume!(d > 0.2);
            let s = d.powf(-1.0 / 3.0);
            let mut gu = tensor::scale(&f, s);
            for (i, row) in gu.iter_mut().enumerate() { row[i] -= 1.0; }
            let kin = kinematics(&gu);
            let (_, p) = deviatoric_pk1(&kin, mu).unwrap();
            prop_assert!(tensor::ddot(&p, &kin.f).abs() < 1e-10);
        }

        #[test]
        fn volumetric_derivatives_consistent(j in 0.3..2.5f64, kappa in 0.1..100.0f64) {
            for model in [VolumetricModel::Quadratic, VolumetricModel::Liu] {
                let h = 1e-6;
                let d = volumetric_derivatives(j, kappa, model).unwrap();
                let p = volumetric_derivatives(j + h, kappa, model).unwrap();
                let m = volumetric_derivatives(j - h, kappa, model).unwrap();
                prop_assert!(((p.w - m.w) / (2.0 * h) - d.w_j).abs() <= 1e-6 * (1.0 + d.w_j.abs()));
                prop_assert!(((p.w_j - m.w_j) / (2.0 * h) - d.w_jj).abs() <= 1e-6 * (1.0 + d.w_jj.abs()));
            }
        }

        #[test]
        fn liu_instantaneous_bulk_modulus_constant(j in 0.01..10.0f64, kappa in 0.1..1e6f64) {
            let d = volumetric_derivatives(j, kappa, VolumetricModel::Liu).unwrap();
            prop_assert!(((j * d.w_jj) - kappa).abs() <= 4.0 * f64::EPSILON * kappa);
        }
    }
}
