//! Energy, volume and error norms of finite element fields.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{FeSpace, TimeState};
use crate::material::{self, MaterialParams};
use crate::scalar::Real;

/// One row of the diagnostics time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRecord<T> {
    pub t: T,
    pub energy_total: T,
    pub energy_kinetic: T,
    pub energy_deviatoric: T,
    pub energy_pressure: T,
    pub volume: T,
    pub vol_err_l1: T,
    pub vol_err_l2: T,
    pub vol_err_linf: T,
}

/// Kinetic, deviatoric and pressure parts of the total energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energy<T> {
    pub kinetic: T,
    pub deviatoric: T,
    pub pressure: T,
}

impl<T: Real> Energy<T> {
    pub fn total(&self) -> T {
        self.kinetic + self.deviatoric + self.pressure
    }
}

/// Per-element partial sums reduced in element order, so results do not
/// depend on the thread count.
fn element_sums<T: Real, const N: usize>(
    space: &FeSpace<T>,
    f: impl Fn(usize, usize) -> Result<[T; N]> + Sync,
) -> Result<[T; N]> {
    let parts: Vec<Result<[T; N]>> = (0..space.mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let mut acc = [T::zero(); N];
            for q in 0..space.n_qp {
                let w = space.jxw[e * space.n_qp + q];
                let v = f(e, q)?;
                for k in 0..N {
                    acc[k] += w * v[k];
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = [T::zero(); N];
    for p in parts {
        let p = p?;
        for k in 0..N {
            total[k] += p[k];
        }
    }
    Ok(total)
}

/// `int rho0/2 |V|^2 + W_dev(F) + p (J - 1) / 2 dV`.
pub fn total_energy<T: Real>(space: &FeSpace<T>, params: &MaterialParams<T>, u: &[T], v: &[T], p: &[T]) -> Result<Energy<T>> {
    let half = T::lit(0.5);
    let [kinetic, deviatoric, pressure] = element_sums(space, |e, q| {
        let vel = space.field_value(v, e, q);
        let kin = material::kinematics(&space.field_gradient(u, e, q));
        let (w_dev, _) = material::deviatoric_pk1(&kin, params.mu)?;
        let pq = space.pressure_value(p, e, q);
        Ok([half * params.rho0 * crate::tensor::dot3(&vel, &vel), w_dev, half * pq * (kin.j - T::one())])
    })?;
    Ok(Energy {
        kinetic,
        deviatoric,
        pressure,
    })
}

/// Deformed volume `int J dV`.
pub fn total_volume<T: Real>(space: &FeSpace<T>, u: &[T]) -> T {
    element_sums(space, |e, q| Ok([material::kinematics(&space.field_gradient(u, e, q)).j]))
        .map(|[v]| v)
        .unwrap_or_else(|_| T::nan())
}

/// `(L1, L2, Linf)` of `J - 1`; the maximum is taken over quadrature points.
pub fn volumetric_error<T: Real>(space: &FeSpace<T>, u: &[T]) -> (T, T, T) {
    let [l1, l2sq] = element_sums(space, |e, q| {
        let d = (material::kinematics(&space.field_gradient(u, e, q)).j - T::one()).abs();
        Ok([d, d * d])
    })
    .unwrap_or([T::nan(); 2]);
    let linf = (0..space.mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            (0..space.n_qp)
                .map(|q| (material::kinematics(&space.field_gradient(u, e, q)).j - T::one()).abs())
                .fold(T::zero(), T::max)
        })
        .collect::<Vec<T>>()
        .into_iter()
        .fold(T::zero(), T::max);
    (l1, l2sq.sqrt(), linf)
}

/// Full diagnostics row for a state.
pub fn record<T: Real>(space: &FeSpace<T>, params: &MaterialParams<T>, state: &TimeState<T>) -> Result<DiagnosticRecord<T>> {
    let en = total_energy(space, params, &state.u, &state.v, &state.p)?;
    let (l1, l2, linf) = volumetric_error(space, &state.u);
    Ok(DiagnosticRecord {
        t: state.t,
        energy_total: en.total(),
        energy_kinetic: en.kinetic,
        energy_deviatoric: en.deviatoric,
        energy_pressure: en.pressure,
        volume: total_volume(space, &state.u),
        vol_err_l1: l1,
        vol_err_l2: l2,
        vol_err_linf: linf,
    })
}

/// Integral norms over the reference domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    LInf,
}

impl std::str::FromStr for Norm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            "linf" | "inf" => Ok(Self::LInf),
            o => Err(Error::Config(format!("unknown norm '{o}'"))),
        }
    }
}

/// Which finite element space a coefficient vector lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// Q2 vector field (displacement, velocity).
    Vector,
    /// Q1 scalar field (pressure).
    Pressure,
}

/// Norm of a field, with the pointwise Euclidean magnitude for vectors.
pub fn field_norm<T: Real>(space: &FeSpace<T>, field: &[T], kind: FieldKind, norm: Norm) -> Result<T> {
    let expected = match kind {
        FieldKind::Vector => space.dofmap.n_velocity_dofs,
        FieldKind::Pressure => space.dofmap.n_pressure_dofs,
    };
    if field.len() != expected {
        return Err(Error::Usage(format!("field has {} entries, space expects {expected}", field.len())));
    }
    let magnitude = |e: usize, q: usize| match kind {
        FieldKind::Vector => {
            let v = space.field_value(field, e, q);
            crate::tensor::dot3(&v, &v).sqrt()
        }
        FieldKind::Pressure => space.pressure_value(field, e, q).abs(),
    };
    Ok(match norm {
        Norm::L1 => element_sums(space, |e, q| Ok([magnitude(e, q)]))?[0],
        Norm::L2 => element_sums(space, |e, q| {
            let m = magnitude(e, q);
            Ok([m * m])
        })?[0]
            .sqrt(),
        Norm::LInf => (0..space.mesh.n_elements())
            .flat_map(|e| (0..space.n_qp).map(move |q| (e, q)))
            .map(|(e, q)| magnitude(e, q))
            .fold(T::zero(), T::max),
    })
}

/// Norm of `coarse - fine` for two solutions on the same mesh.
pub fn self_convergence<T: Real>(space: &FeSpace<T>, coarse: &[T], fine: &[T], kind: FieldKind, norm: Norm) -> Result<T> {
    if coarse.len() != fine.len() {
        return Err(Error::Usage("self-convergence fields come from different meshes".into()));
    }
    let diff: Vec<T> = coarse.iter().zip(fine).map(|(&a, &b)| a - b).collect();
    field_norm(space, &diff, kind, norm)
}

/// `log2(e_coarse / e_fine)`.
pub fn order<T: Real>(e_coarse: T, e_fine: T) -> T {
    (e_coarse / e_fine).log2()
}

/// Least-squares slope of `log2 e` against level index, negated; the
/// observed order for a sequence of errors under halving.
pub fn fitted_order<T: Real>(errors: &[T]) -> T {
    let n = T::from_count(errors.len());
    let xs: Vec<T> = (0..errors.len()).map(T::from_count).collect();
    let ys: Vec<T> = errors.iter().map(|e| e.log2()).collect();
    let xm = xs.iter().copied().sum::<T>() / n;
    let ym = ys.iter().copied().sum::<T>() / n;
    let num: T = xs.iter().zip(&ys).map(|(&x, &y)| (x - xm) * (y - ym)).sum();
    let den: T = xs.iter().map(|&x| (x - xm) * (x - xm)).sum();
    -num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::VolumetricModel;
    use crate::mesh::{default_dofmap, generate_mesh, Geometry};

    fn space(g: Geometry, n: [usize; 3]) -> FeSpace<f64> {
        let mesh = generate_mesh(g, n).unwrap();
        let dofmap = default_dofmap(&mesh);
        FeSpace::new(mesh, dofmap).unwrap()
    }

    fn params() -> MaterialParams<f64> {
        MaterialParams::from_e_nu(100.0, 0.4, 2.0, VolumetricModel::Quadratic, 1.0).unwrap()
    }

    #[test]
    fn kinetic_energy_of_uniform_velocity() {
        let s = space(Geometry::UnitSquare, [3, 3, 1]);
        let nv = s.dofmap.n_velocity_dofs;
        let v = s.interpolate(|_| [0.3, -0.4, 0.0]);
        let e = total_energy(&s, &params(), &vec![0.0; nv], &v, &vec![0.0; s.dofmap.n_pressure_dofs]).unwrap();
        assert!((e.kinetic - 0.25).abs() < 1e-13);
        assert!(e.deviatoric.abs() < 1e-13 && e.pressure == 0.0);
    }

    #[test]
    fn column_kinetic_energy_closed_form() {
        let s = space(Geometry::Column, [2, 2, 12]);
        let v = s.interpolate(|x| {
            let a = 1500.0 * (std::f64::consts::PI * x[2] / 12.0).sin();
            [-a * x[1], a * x[0], 0.0]
        });
        let nv = s.dofmap.n_velocity_dofs;
        let p = MaterialParams::from_e_nu(1.2e7, 0.4, 1.1, VolumetricModel::Quadratic, 2.0).unwrap();
        let e = total_energy(&s, &p, &vec![0.0; nv], &v, &vec![0.0; s.dofmap.n_pressure_dofs]).unwrap();
        // rho/2 1500^2 * int sin^2 dz (= 6) * int (x^2 + y^2) dA (= 8/3)
        let exact = 0.5 * 1.1 * 1500.0f64.powi(2) * 6.0 * 8.0 / 3.0;
        assert!((e.kinetic / exact - 1.0).abs() < 1e-3, "{} vs {exact}", e.kinetic);
    }

    #[test]
    fn volume_of_uniform_stretch_and_rotation() {
        let s = space(Geometry::UnitSquare, [2, 2, 1]);
        let u = s.interpolate(|x| [x[0], 0.0, 0.0]);
        assert!((total_volume(&s, &u) - 2.0).abs() < 1e-13);
        let (l1, l2, linf) = volumetric_error(&s, &u);
        assert!((l1 - 1.0).abs() < 1e-13 && (l2 - 1.0).abs() < 1e-13 && (linf - 1.0).abs() < 1e-13);
        let th = 0.7f64;
        let u = s.interpolate(|x| [th.cos() * x[0] - th.sin() * x[1] - x[0], th.sin() * x[0] + th.cos() * x[1] - x[1], 0.0]);
        assert!((total_volume(&s, &u) - 1.0).abs() < 1e-13);
        let u = s.interpolate(|x| [0.3 * x[1], 0.0, 0.0]);
        assert!(volumetric_error(&s, &u).2 < 1e-14);
    }

    #[test]
    fn synthetic_orders() {
        let s = space(Geometry::UnitSquare, [2, 2, 1]);
        let base = s.interpolate(|x| [x[0].sin(), x[1], 0.0]);
        let pert = s.interpolate(|x| [1.0, x[0] * x[1], 0.0]);
        let at = |dt: f64, p: i32| -> Vec<f64> { base.iter().zip(&pert).map(|(b, c)| b + c * dt.powi(p)).collect() };
        for p in [1, 2] {
            let e1 = self_convergence(&s, &at(0.2, p), &at(0.1, p), FieldKind::Vector, Norm::L2).unwrap();
            let e2 = self_convergence(&s, &at(0.1, p), &at(0.05, p), FieldKind::Vector, Norm::L2).unwrap();
            assert!((order(e1, e2) - p as f64).abs() < 1e-10);
        }
        assert_eq!(self_convergence(&s, &base, &base, FieldKind::Vector, Norm::L1).unwrap(), 0.0);
        assert!(self_convergence(&s, &base, &base[1..], FieldKind::Vector, Norm::L1).is_err());
    }

    #[test]
    fn fitted_order_of_exact_sequence() {
        assert!((fitted_order(&[1.0, 0.25, 0.0625f64]) - 2.0).abs() < 1e-12);
    }
}
