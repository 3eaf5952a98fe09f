//! Finite element assembly of the semi-implicit block system
//!
//! ```text
//! [ M_V   M_Vp ] [ V^{n+1} ]   [ R_V ]
//! [ M_pV  M_p  ] [ p^{n+1} ] = [ R_p ]
//! ```
//!
//! for one step of the two-step schemes (or the one-step startup), plus
//! mass lumping and the Schur-complement preconditioning matrix.

use rayon::prelude::*;

use crate::element::{self, q1_nodes, q2_nodes};
use crate::error::{Error, Result};
use crate::material::{self, MaterialParams};
use crate::mesh::{DofMap, FacetTag, MixedMesh};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;
use crate::tensor::{self, Mat3};

/// Two-step integrator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Adams-Bashforth extrapolation `2 U^n - U^{n-1}`.
    Msbdf2,
    /// Forward-Euler stage `U^n + dt V^n`.
    Febdf2,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msbdf2" => Ok(Self::Msbdf2),
            "febdf2" => Ok(Self::Febdf2),
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Msbdf2 => "msbdf2",
            Scheme::Febdf2 => "febdf2",
        })
    }
}

/// Which stencil a block system discretizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// BDF2 step of the given scheme.
    Bdf2(Scheme),
    /// One-step startup: backward Euler in pressure, forward in the
    /// deviatoric stress and cofactor.
    SemiImplicitEuler,
}

impl StepKind {
    /// Coefficient `beta` of `U^{n+1} = U_hist + beta dt V^{n+1}`.
    pub fn beta<T: Real>(self) -> T {
        match self {
            StepKind::Bdf2(_) => T::lit(2.0 / 3.0),
            StepKind::SemiImplicitEuler => T::one(),
        }
    }

    /// Known part of the displacement update.
    pub fn history_u<T: Real>(self, s: &TimeState<T>) -> Vec<T> {
        match self {
            StepKind::Bdf2(_) => s
                .u
                .iter()
                .zip(&s.u_prev)
                .map(|(&a, &b)| (T::lit(4.0) * a - b) / T::lit(3.0))
                .collect(),
            StepKind::SemiImplicitEuler => s.u.clone(),
        }
    }

    /// Known part of the velocity update.
    pub fn history_v<T: Real>(self, s: &TimeState<T>) -> Vec<T> {
        match self {
            StepKind::Bdf2(_) => s
                .v
                .iter()
                .zip(&s.v_prev)
                .map(|(&a, &b)| (T::lit(4.0) * a - b) / T::lit(3.0))
                .collect(),
            StepKind::SemiImplicitEuler => s.v.clone(),
        }
    }

    /// Displacement at which the explicit deviatoric stress and the
    /// cofactor multiplying the new pressure are evaluated.
    pub fn extrapolate<T: Real>(self, s: &TimeState<T>) -> Vec<T> {
        match self {
            StepKind::Bdf2(Scheme::Msbdf2) => extrapolate_ab2(&s.u, &s.u_prev),
            StepKind::Bdf2(Scheme::Febdf2) => s.u.iter().zip(&s.v).map(|(&u, &v)| u + s.dt * v).collect(),
            StepKind::SemiImplicitEuler => s.u.clone(),
        }
    }
}

/// Second-order Adams-Bashforth extrapolation `2 a - b`.
pub fn extrapolate_ab2<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| T::lit(2.0) * x - y).collect()
}

/// Solution history for the two-step schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeState<T> {
    pub u: Vec<T>,
    pub u_prev: Vec<T>,
    pub v: Vec<T>,
    pub v_prev: Vec<T>,
    pub p: Vec<T>,
    pub t: T,
    pub dt: T,
    /// Completed steps, startup included.
    pub step: usize,
}

impl<T: Real> TimeState<T> {
    pub fn zeros(dofmap: &DofMap<T>, dt: T) -> Self {
        let nv = dofmap.n_velocity_dofs;
        Self {
            u: vec![T::zero(); nv],
            u_prev: vec![T::zero(); nv],
            v: vec![T::zero(); nv],
            v_prev: vec![T::zero(); nv],
            p: vec![T::zero(); dofmap.n_pressure_dofs],
            t: T::zero(),
            dt,
            step: 0,
        }
    }

    pub fn validate(&self, dofmap: &DofMap<T>) -> Result<()> {
        let nv = dofmap.n_velocity_dofs;
        if [&self.u, &self.u_prev, &self.v, &self.v_prev].iter().any(|x| x.len() != nv)
            || self.p.len() != dofmap.n_pressure_dofs
        {
            return Err(Error::Usage("state vector lengths do not match the dof map".into()));
        }
        if !(self.dt > T::zero()) {
            return Err(Error::Usage(format!("time step {} must be positive", self.dt)));
        }
        Ok(())
    }
}

/// External loads sampled at the new time level.
pub struct Loads<'a, T> {
    /// Body force per unit mass `B(X, t)`.
    pub body_force: Option<&'a (dyn Fn([T; 3], T) -> [T; 3] + Sync)>,
    /// Traction `T(X, t)` on `TractionLoaded` facets.
    pub traction: Option<&'a (dyn Fn([T; 3], T) -> [T; 3] + Sync)>,
}

impl<T> Loads<'_, T> {
    pub fn none() -> Self {
        Self {
            body_force: None,
            traction: None,
        }
    }
}

/// Assembly switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AssemblyOptions {
    /// Use the `-dt/kappa` pressure-velocity block and drop the history
    /// term of the pressure residual.
    pub literal_blocks: bool,
    /// Keep the consistent velocity mass matrix in the system.
    pub consistent_mass: bool,
}

/// Geometric data cached per element and quadrature point.
#[derive(Debug, Clone)]
pub struct FeSpace<T> {
    pub mesh: MixedMesh<T>,
    pub dofmap: DofMap<T>,
    pub n_qp: usize,
    /// Reference Q2 values, `n_qp x n2`.
    pub q2_values: Vec<T>,
    /// Reference Q1 values, `n_qp x n1`.
    pub q1_values: Vec<T>,
    /// Quadrature weight times geometric Jacobian, `n_el x n_qp`.
    pub jxw: Vec<T>,
    /// Physical Q2 gradients, `n_el x n_qp x n2`.
    pub q2_grads: Vec<[T; 3]>,
    /// Reference coordinates of the quadrature points, `n_el x n_qp`.
    pub qp_coords: Vec<[T; 3]>,
    /// Consistent scalar (per-component) mass `(N_a, N_b)`, unit density.
    pub scalar_mass: CsrMatrix<T>,
    /// Row sums of `scalar_mass`.
    pub lumped_scalar_mass: Vec<T>,
    /// Pressure mass `(phi_i, phi_j)`.
    pub pressure_mass: CsrMatrix<T>,
    /// Zero matrix with the velocity-pressure coupling pattern.
    coupling_pattern: CsrMatrix<T>,
    /// Reference measure `|Omega_0|` from quadrature.
    pub volume: T,
}

impl<T: Real> FeSpace<T> {
    pub fn new(mesh: MixedMesh<T>, dofmap: DofMap<T>) -> Result<Self> {
        let dim = mesh.dim;
        let n2 = q2_nodes(dim);
        let n1 = q1_nodes(dim);
        let rule = element::cell_rule::<T>(dim);
        let n_qp = rule.len();
        let n_el = mesh.n_elements();

        let mut q2_values = vec![T::zero(); n_qp * n2];
        let mut q1_values = vec![T::zero(); n_qp * n1];
        let mut ref_grads = vec![[T::zero(); 3]; n_qp * n2];
        let mut scratch = vec![[T::zero(); 3]; n1];
        for (q, qp) in rule.iter().enumerate() {
            element::q2_shape(dim, qp.xi, &mut q2_values[q * n2..(q + 1) * n2], &mut ref_grads[q * n2..(q + 1) * n2]);
            element::q1_shape(dim, qp.xi, &mut q1_values[q * n1..(q + 1) * n1], &mut scratch);
        }

        let mut jxw = vec![T::zero(); n_el * n_qp];
        let mut q2_grads = vec![[T::zero(); 3]; n_el * n_qp * n2];
        let mut qp_coords = vec![[T::zero(); 3]; n_el * n_qp];
        for e in 0..n_el {
            let conn = mesh.q2_element(e);
            for (q, qp) in rule.iter().enumerate() {
                let rg = &ref_grads[q * n2..(q + 1) * n2];
                // geometric Jacobian dX/dxi
                let mut jac = tensor::identity::<T>();
                for a in 0..dim {
                    for b in 0..dim {
                        jac[a][b] = conn.iter().zip(rg).map(|(&n, g)| mesh.nodes[n][a] * g[b]).sum();
                    }
                }
                let det = tensor::det(&jac);
                if !(det > T::zero()) {
                    return Err(Error::InvertedElement {
                        element: e,
                        jacobian: det.as_f64(),
                    });
                }
                // physical gradient: grad N = J^{-T} grad_ref N = cof(J) grad_ref / det
                let cof = tensor::cofactor(&jac);
                let base = (e * n_qp + q) * n2;
                for l in 0..n2 {
                    let g = tensor::matvec(&cof, &rg[l]);
                    q2_grads[base + l] = [g[0] / det, g[1] / det, if dim == 3 { g[2] / det } else { T::zero() }];
                }
                jxw[e * n_qp + q] = qp.weight * det;
                let vals = &q2_values[q * n2..(q + 1) * n2];
                let mut x = [T::zero(); 3];
                for (l, &n) in conn.iter().enumerate() {
                    for c in 0..3 {
                        x[c] += vals[l] * mesh.nodes[n][c];
                    }
                }
                qp_coords[e * n_qp + q] = x;
            }
        }

        // scalar Q2 mass, Q1 mass and coupling pattern
        let nn = mesh.n_q2_nodes();
        let np = mesh.n_q1_nodes();
        let mut node_rows = vec![Vec::new(); nn];
        let mut p_rows = vec![Vec::new(); np];
        let mut c_rows = vec![Vec::new(); dofmap.n_velocity_dofs];
        for e in 0..n_el {
            let q2 = mesh.q2_element(e);
            let q1 = mesh.q1_element(e);
            for &a in q2 {
                node_rows[a].extend_from_slice(q2);
                for c in 0..dim {
                    c_rows[a * dim + c].extend_from_slice(q1);
                }
            }
            for &i in q1 {
                p_rows[i].extend_from_slice(q1);
            }
        }
        let mut scalar_mass = CsrMatrix::from_pattern(nn, node_rows);
        let mut pressure_mass = CsrMatrix::from_pattern(np, p_rows);
        let coupling_pattern = CsrMatrix::from_pattern(np, c_rows);
        let mut volume = T::zero();
        for e in 0..n_el {
            let q2 = mesh.q2_element(e);
            let q1 = mesh.q1_element(e);
            for q in 0..n_qp {
                let w = jxw[e * n_qp + q];
                volume += w;
                let v2 = &q2_values[q * n2..(q + 1) * n2];
                for (a, &na) in q2.iter().enumerate() {
                    for (b, &nb) in q2.iter().enumerate() {
                        scalar_mass.add(na, nb, w * v2[a] * v2[b]);
                    }
                }
                let v1 = &q1_values[q * n1..(q + 1) * n1];
                for (i, &ni) in q1.iter().enumerate() {
                    for (j, &nj) in q1.iter().enumerate() {
                        pressure_mass.add(ni, nj, w * v1[i] * v1[j]);
                    }
                }
            }
        }
        let lumped_scalar_mass = lump_mass(&scalar_mass)?;

        Ok(Self {
            mesh,
            dofmap,
            n_qp,
            q2_values,
            q1_values,
            jxw,
            q2_grads,
            qp_coords,
            scalar_mass,
            lumped_scalar_mass,
            pressure_mass,
            coupling_pattern,
            volume,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mesh.dim
    }

    #[inline]
    pub fn n2(&self) -> usize {
        q2_nodes(self.mesh.dim)
    }

    #[inline]
    pub fn n1(&self) -> usize {
        q1_nodes(self.mesh.dim)
    }

    #[inline]
    pub fn q2_values_at(&self, q: usize) -> &[T] {
        let n2 = self.n2();
        &self.q2_values[q * n2..(q + 1) * n2]
    }

    #[inline]
    pub fn q1_values_at(&self, q: usize) -> &[T] {
        let n1 = self.n1();
        &self.q1_values[q * n1..(q + 1) * n1]
    }

    #[inline]
    pub fn q2_grads_at(&self, e: usize, q: usize) -> &[[T; 3]] {
        let n2 = self.n2();
        let base = (e * self.n_qp + q) * n2;
        &self.q2_grads[base..base + n2]
    }

    /// Displacement (or velocity) gradient at a quadrature point, embedded
    /// in 3x3 storage.
    pub fn field_gradient(&self, field: &[T], e: usize, q: usize) -> Mat3<T> {
        let dim = self.dim();
        let grads = self.q2_grads_at(e, q);
        let mut g = tensor::zero();
        for (l, &node) in self.mesh.q2_element(e).iter().enumerate() {
            for c in 0..dim {
                let u = field[node * dim + c];
                for k in 0..dim {
                    g[c][k] += u * grads[l][k];
                }
            }
        }
        g
    }

    /// Vector field value at a quadrature point.
    pub fn field_value(&self, field: &[T], e: usize, q: usize) -> [T; 3] {
        let dim = self.dim();
        let vals = self.q2_values_at(q);
        let mut v = [T::zero(); 3];
        for (l, &node) in self.mesh.q2_element(e).iter().enumerate() {
            for c in 0..dim {
                v[c] += vals[l] * field[node * dim + c];
            }
        }
        v
    }

    /// Pressure value at a quadrature point.
    pub fn pressure_value(&self, p: &[T], e: usize, q: usize) -> T {
        self.q1_values_at(q)
            .iter()
            .zip(self.mesh.q1_element(e))
            .map(|(&phi, &i)| phi * p[i])
            .sum()
    }

    /// Nodal interpolant of a vector field on the velocity space.
    pub fn interpolate(&self, f: impl Fn([T; 3]) -> [T; 3]) -> Vec<T> {
        let dim = self.dim();
        let mut out = vec![T::zero(); self.dofmap.n_velocity_dofs];
        for (n, &x) in self.mesh.nodes.iter().enumerate() {
            let v = f(x);
            for c in 0..dim {
                out[n * dim + c] = v[c];
            }
        }
        out
    }

    /// Consistent velocity mass matrix `(rho0 / dt) (phi_i, phi_j)` over
    /// vector dofs.
    pub fn velocity_mass(&self, rho0: T, dt: T) -> CsrMatrix<T> {
        let dim = self.dim();
        let nv = self.dofmap.n_velocity_dofs;
        let mut rows = vec![Vec::new(); nv];
        for a in 0..self.mesh.n_q2_nodes() {
            let (cols, _) = self.scalar_mass.row(a);
            for c in 0..dim {
                rows[a * dim + c] = cols.iter().map(|&b| b * dim + c).collect();
            }
        }
        let mut m = CsrMatrix::from_pattern(nv, rows);
        let s = rho0 / dt;
        for a in 0..self.mesh.n_q2_nodes() {
            let (cols, vals) = self.scalar_mass.row(a);
            for (&b, &v) in cols.iter().zip(vals) {
                for c in 0..dim {
                    m.add(a * dim + c, b * dim + c, s * v);
                }
            }
        }
        m
    }

    /// Lumped velocity mass `(rho0 / dt) sum_j (phi_i, phi_j)` per vector dof.
    pub fn lumped_velocity_mass(&self, rho0: T, dt: T) -> Vec<T> {
        let dim = self.dim();
        let s = rho0 / dt;
        let mut out = Vec::with_capacity(self.dofmap.n_velocity_dofs);
        for &m in &self.lumped_scalar_mass {
            for _ in 0..dim {
                out.push(s * m);
            }
        }
        out
    }
}

/// Row-sum lumping of a mass matrix.
pub fn lump_mass<T: Real>(m: &CsrMatrix<T>) -> Result<Vec<T>> {
    let sums = m.row_sums();
    if let Some((row, &value)) = sums.iter().enumerate().find(|(_, &v)| !(v > T::zero())) {
        return Err(Error::NonPositiveLumpedMass {
            row,
            value: value.as_f64(),
        });
    }
    Ok(sums)
}

/// The assembled block system of one step.
#[derive(Debug, Clone)]
pub struct BlockSystem<T> {
    pub kind: StepKind,
    pub dt: T,
    /// Consistent `M_V`, present only when requested.
    pub m_v: Option<CsrMatrix<T>>,
    /// Row-sum lumped `M_V`.
    pub m_v_lumped: Vec<T>,
    pub m_vp: CsrMatrix<T>,
    pub m_pv: CsrMatrix<T>,
    pub m_p: CsrMatrix<T>,
    pub r_v: Vec<T>,
    pub r_p: Vec<T>,
    /// Known part of the displacement update.
    pub u_history: Vec<T>,
    /// Whether Dirichlet rows have been eliminated.
    pub constrained: bool,
}

impl<T: Real> BlockSystem<T> {
    /// `U^{n+1} = U_hist + beta dt V^{n+1}`.
    pub fn displacement_update(&self, v_next: &[T]) -> Vec<T> {
        let s = self.kind.beta::<T>() * self.dt;
        self.u_history.iter().zip(v_next).map(|(&u, &v)| u + s * v).collect()
    }
}

struct ElementContribution<T> {
    m_vp: Vec<T>,
    m_pv: Vec<T>,
    r_v: Vec<T>,
    r_p: Vec<T>,
}

fn gather<T: Real>(field: &[T], conn: &[usize], dim: usize, out: &mut Vec<T>) {
    out.clear();
    for &n in conn {
        for c in 0..dim {
            out.push(field[n * dim + c]);
        }
    }
}

fn local_gradient<T: Real>(local: &[T], grads: &[[T; 3]], dim: usize) -> Mat3<T> {
    let mut g = tensor::zero();
    for (l, gl) in grads.iter().enumerate() {
        for c in 0..dim {
            let u = local[l * dim + c];
            for k in 0..dim {
                g[c][k] += u * gl[k];
            }
        }
    }
    g
}

fn check_jacobian<T: Real>(j: T, e: usize) -> Result<()> {
    if j > T::zero() {
        Ok(())
    } else {
        Err(Error::InvertedElement {
            element: e,
            jacobian: j.as_f64(),
        })
    }
}

/// Assembles matrices and residuals of one step. Dirichlet conditions are
/// not yet applied; see [`apply_dirichlet`].
pub fn assemble_system<T: Real>(
    space: &FeSpace<T>,
    params: &MaterialParams<T>,
    state: &TimeState<T>,
    kind: StepKind,
    loads: &Loads<'_, T>,
    opts: AssemblyOptions,
) -> Result<BlockSystem<T>> {
    state.validate(&space.dofmap)?;
    let mesh = &space.mesh;
    let dim = mesh.dim;
    let n2 = space.n2();
    let n1 = space.n1();
    let nloc = n2 * dim;
    let dt = state.dt;
    let beta = kind.beta::<T>();
    let coupling_coef = if opts.literal_blocks { dt } else { beta * dt };
    let t_next = state.t + dt;
    let u_bar = kind.extrapolate(state);
    let u_history = kind.history_u(state);
    // known part of U^{n+1} - U^n entering the linearized pressure equation
    let u_shift: Vec<T> = u_history.iter().zip(&state.u).map(|(&h, &u)| h - u).collect();
    let include_shift = !opts.literal_blocks && matches!(kind, StepKind::Bdf2(_));

    let contributions: Vec<Result<ElementContribution<T>>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let conn = mesh.q2_element(e);
            let mut ub = Vec::with_capacity(nloc);
            let mut un = Vec::with_capacity(nloc);
            let mut du = Vec::with_capacity(nloc);
            gather(&u_bar, conn, dim, &mut ub);
            gather(&state.u, conn, dim, &mut un);
            gather(&u_shift, conn, dim, &mut du);
            let mut c = ElementContribution {
                m_vp: vec![T::zero(); nloc * n1],
                m_pv: vec![T::zero(); n1 * nloc],
                r_v: vec![T::zero(); nloc],
                r_p: vec![T::zero(); n1],
            };
            for q in 0..space.n_qp {
                let w = space.jxw[e * space.n_qp + q];
                let grads = space.q2_grads_at(e, q);
                let vals = space.q2_values_at(q);
                let phi = space.q1_values_at(q);

                let kin_bar = material::kinematics(&local_gradient(&ub, grads, dim));
                check_jacobian(kin_bar.j, e)?;
                let (_, p_dev) = material::deviatoric_pk1(&kin_bar, params.mu)?;
                let kin_n = material::kinematics(&local_gradient(&un, grads, dim));
                check_jacobian(kin_n.j, e)?;
                let vol = material::volumetric_scaled(kin_n.j, params.vol_model)?;

                let body = loads
                    .body_force
                    .map(|b| b(space.qp_coords[e * space.n_qp + q], t_next))
                    .unwrap_or([T::zero(); 3]);

                let mut rp_point = vol.w_j;
                if include_shift {
                    let gdu = local_gradient(&du, grads, dim);
                    rp_point += vol.w_jj * tensor::ddot(&kin_n.h, &gdu);
                }
                for (m, &phm) in phi.iter().enumerate() {
                    c.r_p[m] += w * phm * rp_point;
                }

                for l in 0..n2 {
                    let hb = tensor::matvec(&kin_bar.h, &grads[l]);
                    let hn = tensor::matvec(&kin_n.h, &grads[l]);
                    for comp in 0..dim {
                        let row = l * dim + comp;
                        let stress: T = (0..dim).map(|k| p_dev[comp][k] * grads[l][k]).sum();
                        c.r_v[row] += w * beta * (params.rho0 * body[comp] * vals[l] - stress);
                        for (m, &phm) in phi.iter().enumerate() {
                            c.m_vp[row * n1 + m] += w * beta * hb[comp] * phm;
                            c.m_pv[m * nloc + row] -= w * coupling_coef * vol.w_jj * hn[comp] * phm;
                        }
                    }
                }
            }
            Ok(c)
        })
        .collect();

    let nv = space.dofmap.n_velocity_dofs;
    let mut m_vp = space.coupling_pattern.clone();
    let mut r_v = vec![T::zero(); nv];
    let mut r_p = vec![T::zero(); space.dofmap.n_pressure_dofs];
    let mut pv_triplets = Vec::with_capacity(mesh.n_elements() * n1 * nloc);
    let mut dofs = Vec::with_capacity(nloc);
    for (e, c) in contributions.into_iter().enumerate() {
        let c = c?;
        space.dofmap.element_velocity_dofs(mesh, e, &mut dofs);
        let pdofs = mesh.q1_element(e);
        for (r, &gr) in dofs.iter().enumerate() {
            r_v[gr] += c.r_v[r];
            for (m, &gm) in pdofs.iter().enumerate() {
                m_vp.add(gr, gm, c.m_vp[r * n1 + m]);
            }
        }
        for (m, &gm) in pdofs.iter().enumerate() {
            r_p[gm] += c.r_p[m];
            for (r, &gr) in dofs.iter().enumerate() {
                pv_triplets.push((gm, gr, c.m_pv[m * nloc + r]));
            }
        }
    }
    let m_pv = CsrMatrix::from_triplets(space.dofmap.n_pressure_dofs, nv, &pv_triplets);

    if let Some(traction) = loads.traction {
        add_traction(space, traction, t_next, beta, &mut r_v)?;
    }

    // inertia
    let v_hist = kind.history_v(state);
    let m_v_lumped = space.lumped_velocity_mass(params.rho0, dt);
    let m_v = if opts.consistent_mass {
        let m = space.velocity_mass(params.rho0, dt);
        let inertia = m.mul_vec(&v_hist);
        for (r, x) in r_v.iter_mut().zip(inertia) {
            *r += x;
        }
        Some(m)
    } else {
        for ((r, &m), &v) in r_v.iter_mut().zip(&m_v_lumped).zip(&v_hist) {
            *r += m * v;
        }
        None
    };

    let mut m_p = space.pressure_mass.clone();
    m_p.scale(params.inv_kappa());

    Ok(BlockSystem {
        kind,
        dt,
        m_v,
        m_v_lumped,
        m_vp,
        m_pv,
        m_p,
        r_v,
        r_p,
        u_history,
        constrained: false,
    })
}

fn add_traction<T: Real>(
    space: &FeSpace<T>,
    traction: &(dyn Fn([T; 3], T) -> [T; 3] + Sync),
    t: T,
    beta: T,
    r_v: &mut [T],
) -> Result<()> {
    let mesh = &space.mesh;
    let dim = mesh.dim;
    let n2 = space.n2();
    let mut vals = vec![T::zero(); n2];
    let mut grads = vec![[T::zero(); 3]; n2];
    for facet in mesh.facets.iter().filter(|f| f.tag == FacetTag::TractionLoaded) {
        let conn = mesh.q2_element(facet.element);
        for fp in mesh.facet_quadrature(facet.element, facet.side)? {
            element::q2_shape(dim, fp.xi, &mut vals, &mut grads);
            let mut x = [T::zero(); 3];
            for (l, &n) in conn.iter().enumerate() {
                for c in 0..3 {
                    x[c] += vals[l] * mesh.nodes[n][c];
                }
            }
            let tr = traction(x, t);
            for (l, &n) in conn.iter().enumerate() {
                if vals[l] == T::zero() {
                    continue;
                }
                for c in 0..dim {
                    r_v[n * dim + c] += beta * fp.weight * vals[l] * tr[c];
                }
            }
        }
    }
    Ok(())
}

/// Matrices of the block system (residuals are assembled alongside).
pub fn assemble_blocks<T: Real>(
    space: &FeSpace<T>,
    params: &MaterialParams<T>,
    state: &TimeState<T>,
    scheme: Scheme,
    opts: AssemblyOptions,
) -> Result<BlockSystem<T>> {
    assemble_system(space, params, state, StepKind::Bdf2(scheme), &Loads::none(), opts)
}

/// `(R_V, R_p)` of one BDF2 step.
pub fn assemble_residuals<T: Real>(
    space: &FeSpace<T>,
    params: &MaterialParams<T>,
    state: &TimeState<T>,
    scheme: Scheme,
    loads: &Loads<'_, T>,
    opts: AssemblyOptions,
) -> Result<(Vec<T>, Vec<T>)> {
    let sys = assemble_system(space, params, state, StepKind::Bdf2(scheme), loads, opts)?;
    Ok((sys.r_v, sys.r_p))
}

/// Eliminates Dirichlet velocity dofs: identity rows in `M_V`, zero rows in
/// `M_Vp`, zero columns in `M_pV` (moved to `R_p`), `R_V` set to the
/// prescribed values.
pub fn apply_dirichlet<T: Real>(sys: &mut BlockSystem<T>, dofmap: &DofMap<T>) {
    if sys.constrained {
        return;
    }
    let mask = &dofmap.is_constrained;
    let mut g = vec![T::zero(); dofmap.n_velocity_dofs];
    for (&d, &v) in &dofmap.constrained {
        g[d] = v;
    }
    let has_values = dofmap.constrained.values().any(|&v| v != T::zero());
    if has_values {
        let shift = sys.m_pv.mul_vec(&g);
        for (r, s) in sys.r_p.iter_mut().zip(shift) {
            *r -= s;
        }
    }
    sys.m_pv.zero_columns(mask);
    if let Some(m_v) = sys.m_v.as_mut() {
        if has_values {
            let shift = m_v.mul_vec(&g);
            for (i, (r, s)) in sys.r_v.iter_mut().zip(shift).enumerate() {
                if !mask[i] {
                    *r -= s;
                }
            }
        }
        m_v.zero_columns(mask);
    }
    for (&d, &v) in &dofmap.constrained {
        sys.m_v_lumped[d] = T::one();
        if let Some(m_v) = sys.m_v.as_mut() {
            m_v.set_identity_row(d, T::one());
        }
        sys.m_vp.zero_row(d);
        sys.r_v[d] = v;
    }
    sys.constrained = true;
}

/// Symmetric positive (semi)definite matrix spectrally close to the Schur
/// complement `M_p - M_pV diag(M_V,lumped)^{-1} M_Vp`.
///
/// It is the pressure mass term plus the symmetric part of the lumped
/// triple product, so it equals the lumped Schur complement whenever the
/// extrapolated and current cofactors coincide (e.g. the undeformed state).
pub fn assemble_schur_preconditioner<T: Real>(sys: &BlockSystem<T>) -> CsrMatrix<T> {
    let inv: Vec<T> = sys.m_v_lumped.iter().map(|&m| T::one() / m).collect();
    let c = CsrMatrix::mul_diag_mul(&sys.m_pv, &inv, &sys.m_vp);
    let ct = c.transpose();
    let half = T::lit(0.5);
    let sym = CsrMatrix::add_scaled(&c, -half, &ct, -half);
    CsrMatrix::add_scaled(&sys.m_p, T::one(), &sym, T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::VolumetricModel;
    use crate::mesh::{default_dofmap, generate_mesh, Geometry};

    fn space(n: usize) -> FeSpace<f64> {
        let mesh = generate_mesh(Geometry::UnitSquare, [n, n, 1]).unwrap();
        let dofmap = default_dofmap(&mesh);
        FeSpace::new(mesh, dofmap).unwrap()
    }

    fn params(nu: f64) -> MaterialParams<f64> {
        MaterialParams::from_e_nu(100.0, nu, 1.0, VolumetricModel::Quadratic, 1.0).unwrap()
    }

    #[test]
    fn single_element_mass_totals() {
        let s = space(1);
        let m = s.velocity_mass(1.0, 1.0);
        let total: f64 = m.values().iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
        let lumped = s.lumped_velocity_mass(1.0, 1.0);
        assert!((lumped.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        assert!(lumped.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn quadrature_volume_matches_geometry() {
        for (g, n) in [(Geometry::UnitSquare, [3, 2, 1]), (Geometry::CooksMembrane, [5, 3, 1]), (Geometry::Column, [1, 2, 3])] {
            let mesh = generate_mesh::<f64>(g, n).unwrap();
            let dm = default_dofmap(&mesh);
            let s = FeSpace::new(mesh, dm).unwrap();
            assert!((s.volume - g.measure::<f64>()).abs() < 1e-10 * s.volume);
        }
        // shoelace area of the Cook corner polygon
        let c = [[0.0, 0.0], [48.0, 44.0], [48.0, 60.0], [0.0, 44.0]];
        let shoelace: f64 = (0..4).map(|i| c[i][0] * c[(i + 1) % 4][1] - c[(i + 1) % 4][0] * c[i][1]).sum::<f64>() / 2.0;
        assert_eq!(Geometry::CooksMembrane.measure::<f64>(), shoelace);
    }

    #[test]
    fn lumping_a_diagonal_is_identity() {
        let d = CsrMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        assert_eq!(lump_mass(&d).unwrap(), vec![1.0, 2.0, 3.0]);
        let bad = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, -2.0), (1, 1, 1.0)]);
        assert!(matches!(lump_mass(&bad), Err(Error::NonPositiveLumpedMass { row: 0, .. })));
    }

    #[test]
    fn zero_state_gives_zero_residuals() {
        let s = space(2);
        let st = TimeState::zeros(&s.dofmap, 0.01);
        let sys = assemble_system(&s, &params(0.4), &st, StepKind::Bdf2(Scheme::Msbdf2), &Loads::none(), AssemblyOptions::default()).unwrap();
        assert!(sys.r_v.iter().all(|&x| x == 0.0));
        assert!(sys.r_p.iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn incompressible_pressure_mass_vanishes() {
        let s = space(2);
        let st = TimeState::zeros(&s.dofmap, 0.01);
        let sys = assemble_blocks(&s, &params(0.5), &st, Scheme::Febdf2, AssemblyOptions::default()).unwrap();
        assert!(sys.m_p.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn inverted_element_reported() {
        let s = space(1);
        let mut st = TimeState::zeros(&s.dofmap, 0.01);
        // mirror the element through x = 0
        for (n, x) in s.mesh.nodes.iter().enumerate() {
            st.u[2 * n] = -2.0 * x[0];
            st.u_prev[2 * n] = -2.0 * x[0];
        }
        let err = assemble_blocks(&s, &params(0.4), &st, Scheme::Msbdf2, AssemblyOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InvertedElement { element: 0, .. }));
    }
}
