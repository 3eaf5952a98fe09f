//! Krylov solvers, preconditioners and the Schur-complement step update.

use crate::error::{Error, Result};
use crate::fem::{assemble_schur_preconditioner, BlockSystem};
use crate::scalar::{axpy, dot, norm2, Real};
use crate::sparse::CsrMatrix;

/// Stage of a step solve, reported on failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStage {
    SchurPressure,
    VelocityUpdate,
}

/// Something that can compute `y = A x`.
pub trait LinearOperator<T> {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()>;
}

impl<T: Real> LinearOperator<T> for CsrMatrix<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        self.matvec(x, y);
        Ok(())
    }
}

/// `z = M^{-1} r`.
pub trait Preconditioner<T> {
    fn apply(&self, r: &[T], z: &mut [T]);
}

/// No preconditioning.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPreconditioner;

impl<T: Real> Preconditioner<T> for IdentityPreconditioner {
    fn apply(&self, r: &[T], z: &mut [T]) {
        z.copy_from_slice(r);
    }
}

/// Diagonal scaling. Zero or non-finite diagonal entries act as one.
#[derive(Debug, Clone)]
pub struct Jacobi<T> {
    inv_diag: Vec<T>,
}

impl<T: Real> Jacobi<T> {
    pub fn new(diag: &[T]) -> Self {
        let inv_diag = diag
            .iter()
            .map(|&d| if d != T::zero() && d.is_finite() { T::one() / d } else { T::one() })
            .collect();
        Self { inv_diag }
    }
}

impl<T: Real> Preconditioner<T> for Jacobi<T> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        for ((zi, &ri), &d) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * d;
        }
    }
}

/// Zero-fill incomplete Cholesky factor `L L^T ~ A + shift diag(A)`.
#[derive(Debug, Clone)]
pub struct IncompleteCholesky<T> {
    /// Strictly lower part plus diagonal, row-wise, columns ascending.
    l: CsrMatrix<T>,
    pub shift: T,
}

impl<T: Real> IncompleteCholesky<T> {
    /// Factors the lower triangle of a symmetric matrix. Fails on a
    /// nonpositive pivot.
    pub fn new(a: &CsrMatrix<T>, shift: T) -> Result<Self> {
        let n = a.nrows();
        let rows: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut r: Vec<usize> = a.row(i).0.iter().copied().filter(|&j| j <= i).collect();
                if !r.contains(&i) {
                    r.push(i);
                }
                r
            })
            .collect();
        let mut l = CsrMatrix::from_pattern(n, rows);
        let ptr = l.row_ptr().to_vec();
        let cols = l.col_idx().to_vec();
        let mut vals = vec![T::zero(); cols.len()];
        for i in 0..n {
            let (ac, av) = a.row(i);
            for (&j, &v) in ac.iter().zip(av) {
                if j <= i {
                    let k = ptr[i] + cols[ptr[i]..ptr[i + 1]].binary_search(&j).unwrap();
                    vals[k] += if j == i { v * (T::one() + shift) } else { v };
                }
            }
        }
        let mut diag = vec![T::zero(); n];
        for i in 0..n {
            for ki in ptr[i]..ptr[i + 1] {
                let k = cols[ki];
                // sum_{j<k} L_ij L_kj over the shared pattern
                let (mut p, mut q) = (ptr[i], ptr[k]);
                let mut s = T::zero();
                while p < ki && q < ptr[k + 1] && cols[q] < k {
                    match cols[p].cmp(&cols[q]) {
                        std::cmp::Ordering::Less => p += 1,
                        std::cmp::Ordering::Greater => q += 1,
                        std::cmp::Ordering::Equal => {
                            s += vals[p] * vals[q];
                            p += 1;
                            q += 1;
                        }
                    }
                }
                if k < i {
                    vals[ki] = (vals[ki] - s) / diag[k];
                } else {
                    let piv = vals[ki] - s;
                    if !(piv > T::zero()) || !piv.is_finite() {
                        return Err(Error::Singular(format!("incomplete Cholesky pivot {piv} at row {i}")));
                    }
                    vals[ki] = piv.sqrt();
                    diag[i] = vals[ki];
                }
            }
        }
        l.values_mut().copy_from_slice(&vals);
        Ok(Self { l, shift })
    }
}

impl<T: Real> Preconditioner<T> for IncompleteCholesky<T> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        let n = r.len();
        let mut y = r.to_vec();
        for i in 0..n {
            let (c, v) = self.l.row(i);
            let mut s = y[i];
            let last = c.len() - 1;
            for (&j, &lij) in c[..last].iter().zip(v) {
                s -= lij * y[j];
            }
            y[i] = s / v[last];
        }
        for i in (0..n).rev() {
            let (c, v) = self.l.row(i);
            let last = c.len() - 1;
            let zi = y[i] / v[last];
            z[i] = zi;
            for (&j, &lij) in c[..last].iter().zip(v) {
                y[j] -= lij * zi;
            }
        }
    }
}

/// Preconditioner choice for the pressure Schur solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchurPreconditioner {
    /// IC(0) of the approximate Schur matrix, with Jacobi fallback.
    #[default]
    IncompleteCholesky,
    Jacobi,
    None,
}

impl std::str::FromStr for SchurPreconditioner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ic0" | "ichol" | "incomplete_cholesky" => Ok(Self::IncompleteCholesky),
            "jacobi" => Ok(Self::Jacobi),
            "none" => Ok(Self::None),
            o => Err(Error::Config(format!("unknown preconditioner '{o}'"))),
        }
    }
}

/// Built preconditioner for the Schur solve.
pub enum BuiltPreconditioner<T> {
    Ic0(IncompleteCholesky<T>),
    Jacobi(Jacobi<T>),
    Identity,
}

impl<T: Real> BuiltPreconditioner<T> {
    /// Builds from a symmetric approximation of the operator. IC(0)
    /// breakdown is retried with growing diagonal shifts before falling
    /// back to Jacobi.
    pub fn build(kind: SchurPreconditioner, p: &CsrMatrix<T>) -> Self {
        match kind {
            SchurPreconditioner::None => Self::Identity,
            SchurPreconditioner::Jacobi => Self::Jacobi(Jacobi::new(&p.diagonal())),
            SchurPreconditioner::IncompleteCholesky => {
                for shift in [0.0, 1e-3, 1e-2, 1e-1] {
                    if let Ok(f) = IncompleteCholesky::new(p, T::lit(shift)) {
                        return Self::Ic0(f);
                    }
                }
                Self::Jacobi(Jacobi::new(&p.diagonal()))
            }
        }
    }
}

impl<T: Real> Preconditioner<T> for BuiltPreconditioner<T> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        match self {
            Self::Ic0(f) => f.apply(r, z),
            Self::Jacobi(j) => j.apply(r, z),
            Self::Identity => z.copy_from_slice(r),
        }
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final residual norm relative to the right-hand side.
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients for SPD operators.
///
/// Stops when `|r| <= tol |b|`; fails with [`Error::Indefinite`] when
/// `p^T A p <= 0`.
pub fn pcg<T: Real>(
    a: &dyn LinearOperator<T>,
    b: &[T],
    x: &mut [T],
    m: &dyn Preconditioner<T>,
    tol: T,
    max_iter: usize,
    stage: SolveStage,
) -> Result<SolveReport> {
    let n = a.dim();
    let bnorm = norm2(b);
    if bnorm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(SolveReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![T::zero(); n];
    a.apply(x, &mut r)?;
    for (ri, &bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![T::zero(); n];
    m.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![T::zero(); n];
    let mut res = norm2(&r) / bnorm;
    for it in 0..max_iter {
        if res <= tol {
            return Ok(SolveReport {
                iterations: it,
                relative_residual: res.as_f64(),
            });
        }
        a.apply(&p, &mut ap)?;
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            return Err(Error::Indefinite {
                iteration: it,
                curvature: pap.as_f64(),
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        res = norm2(&r) / bnorm;
        m.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, &zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    if res <= tol {
        return Ok(SolveReport {
            iterations: max_iter,
            relative_residual: res.as_f64(),
        });
    }
    Err(Error::NotConverged {
        stage,
        iterations: max_iter,
        residual: res.as_f64(),
    })
}

/// GMRES settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOptions {
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            restart: 50,
            max_iter: 500,
        }
    }
}

/// Right-preconditioned restarted GMRES.
///
/// Converged when the true residual satisfies `|b - A x| <= tol |b|`.
/// Fails when a restart cycle makes no progress or the iteration budget
/// runs out.
pub fn gmres<T: Real>(
    a: &dyn LinearOperator<T>,
    b: &[T],
    x: &mut [T],
    m: &dyn Preconditioner<T>,
    opts: GmresOptions,
    stage: SolveStage,
) -> Result<SolveReport> {
    let n = a.dim();
    let tol = T::lit(opts.tol);
    let restart = opts.restart.max(1).min(n.max(1));
    let bnorm = norm2(b);
    if bnorm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(SolveReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let mut z = vec![T::zero(); n];
    let mut total = 0usize;
    let mut res;
    loop {
        a.apply(x, &mut r)?;
        for (ri, &bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let beta = norm2(&r);
        res = beta / bnorm;
        if res <= tol {
            return Ok(SolveReport {
                iterations: total,
                relative_residual: res.as_f64(),
            });
        }
        if total >= opts.max_iter {
            break;
        }
        let cycle_start = res;
        let mut basis: Vec<Vec<T>> = Vec::with_capacity(restart + 1);
        basis.push(r.iter().map(|&v| v / beta).collect());
        let mut h = vec![vec![T::zero(); restart]; restart + 1];
        let mut cs = vec![T::zero(); restart];
        let mut sn = vec![T::zero(); restart];
        let mut g = vec![T::zero(); restart + 1];
        g[0] = beta;
        let mut k = 0;
        while k < restart && total < opts.max_iter {
            m.apply(&basis[k], &mut z);
            a.apply(&z, &mut w)?;
            // modified Gram-Schmidt
            for (i, vi) in basis.iter().enumerate() {
                let hik = dot(&w, vi);
                h[i][k] = hik;
                axpy(-hik, vi, &mut w);
            }
            let hn = norm2(&w);
            h[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let denom = h[k][k].hypot(h[k + 1][k]);
            if denom == T::zero() {
                cs[k] = T::one();
                sn[k] = T::zero();
            } else {
                cs[k] = h[k][k] / denom;
                sn[k] = h[k + 1][k] / denom;
            }
            h[k][k] = denom;
            h[k + 1][k] = T::zero();
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k] * g[k];
            total += 1;
            k += 1;
            let est = g[k].abs() / bnorm;
            if est <= tol || hn == T::zero() {
                break;
            }
            basis.push(w.iter().map(|&v| v / hn).collect());
        }
        // back substitution and update
        let mut y = vec![T::zero(); k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[i][j] * y[j];
            }
            y[i] = if h[i][i] != T::zero() { s / h[i][i] } else { T::zero() };
        }
        let mut corr = vec![T::zero(); n];
        for (yi, vi) in y.iter().zip(&basis) {
            axpy(*yi, vi, &mut corr);
        }
        m.apply(&corr, &mut z);
        axpy(T::one(), &z, x);
        let est = g[k].abs() / bnorm;
        if !(est < cycle_start * T::lit(0.999_999)) && !(est <= tol) {
            res = est;
            break;
        }
    }
    Err(Error::NotConverged {
        stage,
        iterations: total,
        residual: res.as_f64(),
    })
}

/// Application of `S = M_p - M_pV M_V^{-1} M_Vp`.
pub struct SchurOperator<'a, T> {
    sys: &'a BlockSystem<T>,
    inner_tol: T,
}

impl<'a, T: Real> SchurOperator<'a, T> {
    pub fn new(sys: &'a BlockSystem<T>) -> Self {
        Self {
            sys,
            inner_tol: T::epsilon().sqrt() * T::lit(1e-4),
        }
    }

    /// `M_V^{-1} r`, exact for the lumped mass, PCG for the consistent one.
    pub fn inverse_mass(&self, r: &[T]) -> Result<Vec<T>> {
        match &self.sys.m_v {
            None => Ok(r.iter().zip(&self.sys.m_v_lumped).map(|(&a, &m)| a / m).collect()),
            Some(m_v) => {
                let mut x: Vec<T> = r.iter().zip(&self.sys.m_v_lumped).map(|(&a, &m)| a / m).collect();
                let pre = Jacobi::new(&m_v.diagonal());
                pcg(m_v, r, &mut x, &pre, self.inner_tol.max(T::epsilon() * T::lit(100.0)), 1000, SolveStage::VelocityUpdate)?;
                Ok(x)
            }
        }
    }
}

impl<T: Real> LinearOperator<T> for SchurOperator<'_, T> {
    fn dim(&self) -> usize {
        self.sys.m_p.nrows()
    }
    fn apply(&self, p: &[T], y: &mut [T]) -> Result<()> {
        schur_apply(self, p, y)
    }
}

/// Matrix-free `y = (M_p - M_pV M_V^{-1} M_Vp) p`.
pub fn schur_apply<T: Real>(op: &SchurOperator<'_, T>, p: &[T], y: &mut [T]) -> Result<()> {
    let sys = op.sys;
    let t = sys.m_vp.mul_vec(p);
    let u = op.inverse_mass(&t)?;
    sys.m_p.matvec(p, y);
    let w = sys.m_pv.mul_vec(&u);
    for (yi, wi) in y.iter_mut().zip(w) {
        *yi -= wi;
    }
    Ok(())
}

/// Settings of the per-step linear solve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SchurSolveOptions {
    pub gmres: GmresOptions,
    pub preconditioner: SchurPreconditioner,
}

/// New velocity, pressure and displacement of one step.
#[derive(Debug, Clone)]
pub struct StepSolution<T> {
    pub v: Vec<T>,
    pub p: Vec<T>,
    pub u: Vec<T>,
    pub report: SolveReport,
}

/// Solves the (Dirichlet-eliminated) block system by pressure Schur
/// complement and back-substitution for the velocity.
pub fn schur_update<T: Real>(
    sys: &BlockSystem<T>,
    p_guess: &[T],
    opts: SchurSolveOptions,
) -> Result<StepSolution<T>> {
    if !sys.constrained {
        return Err(Error::Usage("Dirichlet conditions must be applied before the Schur solve".into()));
    }
    let op = SchurOperator::new(sys);
    let dr = op.inverse_mass(&sys.r_v)?;
    let mut rhs = sys.r_p.clone();
    let w = sys.m_pv.mul_vec(&dr);
    for (r, wi) in rhs.iter_mut().zip(w) {
        *r -= wi;
    }
    let pre_mat = assemble_schur_preconditioner(sys);
    let pre = BuiltPreconditioner::build(opts.preconditioner, &pre_mat);
    let mut p = p_guess.to_vec();
    let report = gmres(&op, &rhs, &mut p, &pre, opts.gmres, SolveStage::SchurPressure)?;
    let mut rv = sys.r_v.clone();
    let t = sys.m_vp.mul_vec(&p);
    for (r, ti) in rv.iter_mut().zip(t) {
        *r -= ti;
    }
    let v = op.inverse_mass(&rv)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotConverged {
            stage: SolveStage::VelocityUpdate,
            iterations: 0,
            residual: f64::NAN,
        });
    }
    let u = sys.displacement_update(&v);
    Ok(StepSolution { v, p, u, report })
}
