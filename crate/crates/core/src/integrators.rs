//! Time stepping: history initialization, the two BDF2 variants, the
//! simulation loop and a scalar IMEX order probe.

use crate::error::{Error, Result};
use crate::fem::{apply_dirichlet, assemble_system, AssemblyOptions, FeSpace, Loads, Scheme, StepKind, TimeState};
use crate::material::{self, MaterialParams};
use crate::scalar::Real;
use crate::solvers::{pcg, schur_update, Jacobi, SchurSolveOptions, SolveReport, SolveStage};

/// How the `n - 1` history of the two-step schemes is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Startup {
    /// One semi-implicit Euler step from `(U^0, V^0)`.
    #[default]
    SemiImplicitEuler,
    /// `U^{-1} = U^0 - dt V^0`, `V^{-1} = V^0`.
    ExtrapolatedHistory,
}

impl std::str::FromStr for Startup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "semiimpliciteuler" | "euler" => Ok(Self::SemiImplicitEuler),
            "extrapolatedhistory" | "extrapolated" => Ok(Self::ExtrapolatedHistory),
            o => Err(Error::Config(format!("unknown startup '{o}'"))),
        }
    }
}

/// Time-integration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig<T> {
    pub scheme: Scheme,
    pub dt: Option<T>,
    pub cfl: Option<T>,
    pub t_end: T,
    pub startup: Startup,
}

impl<T: Real> SchemeConfig<T> {
    pub fn with_dt(scheme: Scheme, dt: T, t_end: T) -> Self {
        Self {
            scheme,
            dt: Some(dt),
            cfl: None,
            t_end,
            startup: Startup::default(),
        }
    }

    pub fn with_cfl(scheme: Scheme, cfl: T, t_end: T) -> Self {
        Self {
            scheme,
            dt: None,
            cfl: Some(cfl),
            t_end,
            startup: Startup::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.dt, self.cfl) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::Config("exactly one of dt and cfl must be set".into()))
            }
            (Some(dt), None) if !(dt > T::zero()) => return Err(Error::Config(format!("dt = {dt} must be positive"))),
            (None, Some(c)) if !(c > T::zero()) => return Err(Error::Config(format!("cfl = {c} must be positive"))),
            _ => {}
        }
        if !(self.t_end > T::zero()) || !self.t_end.is_finite() {
            return Err(Error::Config(format!("t_end = {} must be positive", self.t_end)));
        }
        Ok(())
    }

    /// Step count and uniform step size landing exactly on `t_end`.
    ///
    /// A CFL-derived `dt = cfl h_min / c_mu` (or a `dt` that does not divide
    /// `t_end`) is reduced to `t_end / ceil(t_end / dt)`.
    pub fn resolve(&self, h_min: T, c_mu: T) -> Result<(usize, T)> {
        self.validate()?;
        let dt = match (self.dt, self.cfl) {
            (Some(dt), _) => dt,
            (None, Some(c)) => c * h_min / c_mu,
            _ => unreachable!(),
        };
        let ratio = self.t_end / dt;
        let rounded = ratio.round();
        let n = if (ratio - rounded).abs() <= T::lit(1e-9) * ratio.max(T::one()) {
            rounded
        } else {
            ratio.ceil()
        };
        let n = n.to_usize().unwrap_or(usize::MAX).max(1);
        Ok((n, self.t_end / T::from_count(n)))
    }
}

/// Everything a step needs besides the state.
pub struct StepContext<'a, T> {
    pub space: &'a FeSpace<T>,
    pub params: &'a MaterialParams<T>,
    pub loads: Loads<'a, T>,
    pub assembly: AssemblyOptions,
    pub solver: SchurSolveOptions,
}

/// Advances `state` by one step of the given stencil.
pub fn step<T: Real>(ctx: &StepContext<'_, T>, state: &TimeState<T>, kind: StepKind) -> Result<(TimeState<T>, SolveReport)> {
    let mut sys = assemble_system(ctx.space, ctx.params, state, kind, &ctx.loads, ctx.assembly)?;
    apply_dirichlet(&mut sys, &ctx.space.dofmap);
    let sol = schur_update(&sys, &state.p, ctx.solver)?;
    let next = TimeState {
        u_prev: state.u.clone(),
        v_prev: state.v.clone(),
        u: sol.u,
        v: sol.v,
        p: sol.p,
        t: state.t + state.dt,
        dt: state.dt,
        step: state.step + 1,
    };
    Ok((next, sol.report))
}

/// One MSBDF2 step.
pub fn msbdf2_step<T: Real>(ctx: &StepContext<'_, T>, state: &TimeState<T>) -> Result<(TimeState<T>, SolveReport)> {
    step(ctx, state, StepKind::Bdf2(Scheme::Msbdf2))
}

/// One FEBDF2 step.
pub fn febdf2_step<T: Real>(ctx: &StepContext<'_, T>, state: &TimeState<T>) -> Result<(TimeState<T>, SolveReport)> {
    step(ctx, state, StepKind::Bdf2(Scheme::Febdf2))
}

/// L2 projection of `W_J(J(U))` onto the pressure space.
pub fn project_pressure<T: Real>(space: &FeSpace<T>, params: &MaterialParams<T>, u: &[T]) -> Result<Vec<T>> {
    let np = space.dofmap.n_pressure_dofs;
    if params.is_incompressible() {
        return Ok(vec![T::zero(); np]);
    }
    let mut rhs = vec![T::zero(); np];
    for e in 0..space.mesh.n_elements() {
        for q in 0..space.n_qp {
            let kin = material::kinematics(&space.field_gradient(u, e, q));
            if !(kin.j > T::zero()) {
                return Err(Error::InvertedElement {
                    element: e,
                    jacobian: kin.j.as_f64(),
                });
            }
            let w_j = material::volumetric_derivatives(kin.j, params.kappa, params.vol_model)?.w_j;
            let w = space.jxw[e * space.n_qp + q];
            for (&phi, &i) in space.q1_values_at(q).iter().zip(space.mesh.q1_element(e)) {
                rhs[i] += w * phi * w_j;
            }
        }
    }
    let mut p = vec![T::zero(); np];
    let m = &space.pressure_mass;
    let tol = (T::epsilon() * T::lit(100.0)).max(T::lit(1e-13));
    pcg(m, &rhs, &mut p, &Jacobi::new(&m.diagonal()), tol, 10 * np + 100, SolveStage::SchurPressure)?;
    Ok(p)
}

/// Builds the two-level history from `(U^0, V^0)`.
///
/// With [`Startup::SemiImplicitEuler`] the returned state is already at
/// `t = dt` (step 1) together with the report of the startup solve.
pub fn initialize_history<T: Real>(
    ctx: &StepContext<'_, T>,
    u0: Vec<T>,
    v0: Vec<T>,
    dt: T,
    startup: Startup,
) -> Result<(TimeState<T>, Option<SolveReport>)> {
    let p0 = project_pressure(ctx.space, ctx.params, &u0)?;
    let mut state = TimeState {
        u_prev: u0.clone(),
        v_prev: v0.clone(),
        u: u0,
        v: v0,
        p: p0,
        t: T::zero(),
        dt,
        step: 0,
    };
    state.validate(&ctx.space.dofmap)?;
    match startup {
        Startup::ExtrapolatedHistory => {
            for (up, &v) in state.u_prev.iter_mut().zip(&state.v) {
                *up -= dt * v;
            }
            Ok((state, None))
        }
        Startup::SemiImplicitEuler => {
            let (s, r) = step(ctx, &state, StepKind::SemiImplicitEuler).map_err(|e| wrap(e, 1, dt))?;
            Ok((s, Some(r)))
        }
    }
}

fn wrap<T: Real>(e: Error, step: usize, time: T) -> Error {
    Error::Step {
        step,
        time: time.as_f64(),
        source: Box::new(e),
    }
}

/// Read-only callback invoked after every `stride`-th step (and after the
/// last one).
pub trait Observer<T> {
    fn observe(&mut self, space: &FeSpace<T>, state: &TimeState<T>, report: Option<&SolveReport>) -> Result<()>;
}

impl<T, F> Observer<T> for F
where
    F: FnMut(&FeSpace<T>, &TimeState<T>, Option<&SolveReport>) -> Result<()>,
{
    fn observe(&mut self, space: &FeSpace<T>, state: &TimeState<T>, report: Option<&SolveReport>) -> Result<()> {
        self(space, state, report)
    }
}

/// Final state and solver statistics of a run.
#[derive(Debug, Clone)]
pub struct SimulationResult<T> {
    pub state: TimeState<T>,
    pub steps: usize,
    pub dt: T,
    pub total_krylov_iterations: usize,
}

/// Runs from `(U^0, V^0)` to `t_end`. The startup step (if any) counts as
/// the first of the `t_end / dt` steps. Observers see the initial state and
/// then every `stride`-th step.
pub fn run_simulation<T: Real>(
    ctx: &StepContext<'_, T>,
    config: &SchemeConfig<T>,
    u0: Vec<T>,
    v0: Vec<T>,
    observers: &mut [&mut dyn Observer<T>],
    stride: usize,
) -> Result<SimulationResult<T>> {
    let c_mu = material::wave_speeds(ctx.params, T::one())?.0;
    let (n_steps, dt) = config.resolve(ctx.space.mesh.h_min, c_mu)?;
    let stride = stride.max(1);
    let mut krylov = 0;

    let initial = TimeState {
        u_prev: u0.clone(),
        v_prev: v0.clone(),
        p: project_pressure(ctx.space, ctx.params, &u0)?,
        u: u0.clone(),
        v: v0.clone(),
        t: T::zero(),
        dt,
        step: 0,
    };
    for o in observers.iter_mut() {
        o.observe(ctx.space, &initial, None)?;
    }

    let (mut state, report) = initialize_history(ctx, u0, v0, dt, config.startup)?;
    if let Some(r) = report {
        krylov += r.iterations;
        if state.step % stride == 0 || state.step == n_steps {
            for o in observers.iter_mut() {
                o.observe(ctx.space, &state, Some(&r)).map_err(|e| wrap(e, state.step, state.t))?;
            }
        }
    }
    let kind = StepKind::Bdf2(config.scheme);
    while state.step < n_steps {
        let (next, r) = step(ctx, &state, kind).map_err(|e| wrap(e, state.step + 1, state.t + dt))?;
        state = next;
        krylov += r.iterations;
        if state.step % stride == 0 || state.step == n_steps {
            for o in observers.iter_mut() {
                o.observe(ctx.space, &state, Some(&r)).map_err(|e| wrap(e, state.step, state.t))?;
            }
        }
    }
    Ok(SimulationResult {
        state,
        steps: n_steps,
        dt,
        total_krylov_iterations: krylov,
    })
}

/// Scalar model `y' = f(y, t) + h(y, t) g(y, t)` split like the elastic
/// system: `f` explicit, `h` implicit and linearized about `y^n`, `g`
/// extrapolated.
pub struct ScalarModel<'a, T> {
    pub f: &'a dyn Fn(T, T) -> T,
    pub h: &'a dyn Fn(T, T) -> T,
    /// `dh/dy`.
    pub dh: &'a dyn Fn(T, T) -> T,
    pub g: &'a dyn Fn(T, T) -> T,
    /// Exact solution; a fine RK4 reference is used when absent.
    pub exact: Option<&'a dyn Fn(T) -> T>,
}

impl<T: Real> ScalarModel<'_, T> {
    fn rhs(&self, y: T, t: T) -> T {
        (self.f)(y, t) + (self.h)(y, t) * (self.g)(y, t)
    }

    fn reference(&self, y0: T, t_end: T, dt: T) -> T {
        if let Some(ex) = self.exact {
            return ex(t_end);
        }
        let n = (t_end / dt).ceil().to_usize().unwrap_or(1).max(1) * 64;
        let k = t_end / T::from_count(n);
        let half = T::lit(0.5);
        let mut y = y0;
        let mut t = T::zero();
        for _ in 0..n {
            let k1 = self.rhs(y, t);
            let k2 = self.rhs(y + half * k * k1, t + half * k);
            let k3 = self.rhs(y + half * k * k2, t + half * k);
            let k4 = self.rhs(y + k * k3, t + k);
            y += k / T::lit(6.0) * (k1 + T::lit(2.0) * k2 + T::lit(2.0) * k3 + k4);
            t += k;
        }
        y
    }
}

/// Integrates the scalar model to `t_end` with the stencils of `scheme`.
/// With `extrapolate = false` the factor `g` is frozen at `(y^n, t^n)`.
pub fn integrate_scalar<T: Real>(model: &ScalarModel<'_, T>, scheme: Scheme, y0: T, t_end: T, dt: T, extrapolate: bool) -> T {
    let n = (t_end / dt).round().to_usize().unwrap_or(1).max(1);
    let step = |kind: StepKind, y: T, y_prev: T, ydot: T, t: T| -> T {
        let beta = kind.beta::<T>();
        let (hist, ybar) = match kind {
            StepKind::Bdf2(s) => {
                let hist = (T::lit(4.0) * y - y_prev) / T::lit(3.0);
                let ybar = match s {
                    Scheme::Msbdf2 => T::lit(2.0) * y - y_prev,
                    Scheme::Febdf2 => y + dt * ydot,
                };
                (hist, ybar)
            }
            StepKind::SemiImplicitEuler => (y, y),
        };
        let tn1 = t + dt;
        let fb = (model.f)(ybar, tn1);
        let gb = if extrapolate && kind != StepKind::SemiImplicitEuler {
            (model.g)(ybar, tn1)
        } else {
            (model.g)(y, t)
        };
        let h0 = (model.h)(y, t);
        let hy = (model.dh)(y, t);
        let bd = beta * dt;
        (hist + bd * (fb + (h0 - hy * y) * gb)) / (T::one() - bd * hy * gb)
    };
    let mut t = T::zero();
    let mut y_prev = y0;
    let mut y = step(StepKind::SemiImplicitEuler, y0, y0, T::zero(), t);
    let mut ydot = (y - y0) / dt;
    t += dt;
    for _ in 1..n {
        let next = step(StepKind::Bdf2(scheme), y, y_prev, ydot, t);
        // velocity of the BDF2 recombination
        ydot = (T::lit(3.0) * next - T::lit(4.0) * y + y_prev) / (T::lit(2.0) * dt);
        y_prev = y;
        y = next;
        t += dt;
    }
    y
}

/// Errors at `t_end` for each step size and the observed orders
/// `log2(e_k / e_{k+1})` between consecutive entries.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderProbe<T> {
    pub dts: Vec<T>,
    pub errors: Vec<T>,
    pub orders: Vec<T>,
}

/// Applies the scheme stencils to the scalar model for every `dt` in
/// `dt_list` and reports observed orders of accuracy.
pub fn scalar_imex_order_probe<T: Real>(
    scheme: Scheme,
    model: &ScalarModel<'_, T>,
    y0: T,
    t_end: T,
    dt_list: &[T],
    extrapolate: bool,
) -> OrderProbe<T> {
    let finest = dt_list.iter().copied().fold(t_end, T::min);
    let reference = model.reference(y0, t_end, finest);
    let errors: Vec<T> = dt_list
        .iter()
        .map(|&dt| (integrate_scalar(model, scheme, y0, t_end, dt, extrapolate) - reference).abs())
        .collect();
    let orders = errors
        .windows(2)
        .zip(dt_list.windows(2))
        .map(|(e, d)| (e[0] / e[1]).ln() / (d[0] / d[1]).ln())
        .collect();
    OrderProbe {
        dts: dt_list.to_vec(),
        errors,
        orders,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{apply_dirichlet, assemble_system};
    use crate::material::VolumetricModel;
    use crate::mesh::{default_dofmap, generate_mesh, Geometry};
    use nalgebra::{DMatrix, DVector};

    fn space(n: usize) -> FeSpace<f64> {
        let mesh = generate_mesh(Geometry::UnitSquare, [n, n, 1]).unwrap();
        let dofmap = default_dofmap(&mesh);
        FeSpace::new(mesh, dofmap).unwrap()
    }

    fn params(nu: f64) -> MaterialParams<f64> {
        MaterialParams::from_e_nu(100.0, nu, 1.0, VolumetricModel::Quadratic, 1.0).unwrap()
    }

    #[test]
    fn resolve_lands_on_t_end() {
        let c = SchemeConfig::with_dt(Scheme::Msbdf2, 0.1, 0.3);
        assert_eq!(c.resolve(1.0, 1.0).unwrap().0, 3);
        let c = SchemeConfig::with_cfl(Scheme::Febdf2, 0.5f64, 1.0);
        let (n, dt) = c.resolve(0.3, 1.0).unwrap();
        assert_eq!(n, 7);
        assert!((dt * 7.0 - 1.0).abs() < 1e-15);
        let mut bad = c;
        bad.dt = Some(0.1);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_state_stays_zero() {
        let s = space(2);
        let p = params(0.4);
        let ctx = StepContext {
            space: &s,
            params: &p,
            loads: Loads::none(),
            assembly: AssemblyOptions::default(),
            solver: SchurSolveOptions::default(),
        };
        let st = TimeState::zeros(&s.dofmap, 0.01);
        for scheme in [Scheme::Msbdf2, Scheme::Febdf2] {
            let (n, _) = step(&ctx, &st, StepKind::Bdf2(scheme)).unwrap();
            assert!(n.u.iter().chain(&n.v).chain(&n.p).all(|&x| x == 0.0));
            assert!((n.t - 0.01).abs() < 1e-16);
        }
    }

    #[test]
    fn extrapolated_history_definition() {
        let s = space(1);
        let p = params(0.4);
        let ctx = StepContext {
            space: &s,
            params: &p,
            loads: Loads::none(),
            assembly: AssemblyOptions::default(),
            solver: SchurSolveOptions::default(),
        };
        let nv = s.dofmap.n_velocity_dofs;
        let v0 = vec![0.3; nv];
        let (st, r) = initialize_history(&ctx, vec![0.0; nv], v0, 0.1, Startup::ExtrapolatedHistory).unwrap();
        assert!(r.is_none());
        assert!(st.u_prev.iter().all(|&x| (x + 0.03).abs() < 1e-16));
    }

    fn perturbed_state(s: &FeSpace<f64>, dt: f64) -> TimeState<f64> {
        let mut st = TimeState::zeros(&s.dofmap, dt);
        for (n, x) in s.mesh.nodes.iter().enumerate() {
            let a = 1e-3 * (3.0 * x[0]).sin() * x[1];
            st.u[2 * n] = a;
            st.u[2 * n + 1] = 0.5 * a * x[0];
            st.u_prev[2 * n] = 0.9 * a;
            st.v[2 * n + 1] = 0.02 * x[1] * x[0];
            st.v_prev[2 * n] = 0.01 * x[1];
        }
        for i in 0..s.dofmap.n_velocity_dofs {
            if s.dofmap.is_constrained[i] {
                st.u[i] = 0.0;
                st.u_prev[i] = 0.0;
                st.v[i] = 0.0;
                st.v_prev[i] = 0.0;
            }
        }
        st
    }

    #[test]
    fn schur_step_matches_dense_monolithic_solve() {
        let s = space(2);
        for nu in [0.4, 0.5] {
            let p = params(nu);
            let st = perturbed_state(&s, 0.01);
            let ctx = StepContext {
                space: &s,
                params: &p,
                loads: Loads::none(),
                assembly: AssemblyOptions::default(),
                solver: SchurSolveOptions::default(),
            };
            let (next, _) = msbdf2_step(&ctx, &st).unwrap();
            let mut sys = assemble_system(&s, &p, &st, StepKind::Bdf2(Scheme::Msbdf2), &Loads::none(), AssemblyOptions::default()).unwrap();
            apply_dirichlet(&mut sys, &s.dofmap);
            let nv = sys.r_v.len();
            let np = sys.r_p.len();
            let mut a = DMatrix::<f64>::zeros(nv + np, nv + np);
            for i in 0..nv {
                a[(i, i)] = sys.m_v_lumped[i];
            }
            let vp = sys.m_vp.to_dense();
            let pv = sys.m_pv.to_dense();
            let pp = sys.m_p.to_dense();
            for i in 0..nv {
                for j in 0..np {
                    a[(i, nv + j)] = vp[i][j];
                    a[(nv + j, i)] = pv[j][i];
                }
            }
            for i in 0..np {
                for j in 0..np {
                    a[(nv + i, nv + j)] = pp[i][j];
                }
            }
            let b = DVector::from_iterator(nv + np, sys.r_v.iter().chain(&sys.r_p).copied());
            let x = a.lu().solve(&b).unwrap();
            let vmax = next.v.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..nv {
                assert!((x[i] - next.v[i]).abs() <= 1e-10 * vmax.max(1.0), "nu {nu} dof {i}");
            }
            // BDF2 recombination
            for i in 0..nv {
                let r = next.u[i] - (4.0 * st.u[i] - st.u_prev[i] + 2.0 * 0.01 * next.v[i]) / 3.0;
                assert!(r.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn febdf2_equals_msbdf2_when_at_rest_with_equal_history() {
        let s = space(2);
        let p = params(0.45);
        let mut st = perturbed_state(&s, 0.01);
        st.u_prev = st.u.clone();
        st.v = vec![0.0; st.v.len()];
        let ctx = StepContext {
            space: &s,
            params: &p,
            loads: Loads::none(),
            assembly: AssemblyOptions::default(),
            solver: SchurSolveOptions::default(),
        };
        let (a, _) = msbdf2_step(&ctx, &st).unwrap();
        let (b, _) = febdf2_step(&ctx, &st).unwrap();
        for (x, y) in a.v.iter().zip(&b.v) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn swapping_history_reverses_extrapolation() {
        let a = [1.0, 2.0];
        let b = [0.5, -1.0];
        assert_eq!(crate::fem::extrapolate_ab2(&a, &b), vec![1.5, 5.0]);
        assert_eq!(crate::fem::extrapolate_ab2(&b, &a), vec![0.0, -4.0]);
    }

    #[test]
    fn linear_probe_is_second_order() {
        let lam = -1.0;
        let f = |_: f64, _: f64| 0.0;
        let h = |y: f64, _: f64| y;
        let dh = |_: f64, _: f64| 1.0;
        let g = move |_: f64, _: f64| lam;
        let ex = move |t: f64| (lam * t).exp();
        let m = ScalarModel {
            f: &f,
            h: &h,
            dh: &dh,
            g: &g,
            exact: Some(&ex),
        };
        let dts = [0.1, 0.05, 0.025, 0.0125];
        for s in [Scheme::Msbdf2, Scheme::Febdf2] {
            let r = scalar_imex_order_probe(s, &m, 1.0, 1.0, &dts, true);
            for o in &r.orders {
                assert!((o - 2.0).abs() < 0.1, "{s}: {:?}", r.orders);
            }
        }
    }

    #[test]
    fn rk4_reference_agrees_with_closed_form() {
        let f = |y: f64, t: f64| t.sin() * y;
        let h = |y: f64, _: f64| y;
        let dh = |_: f64, _: f64| 1.0;
        let g = |_: f64, _: f64| -1.0;
        let m = ScalarModel {
            f: &f,
            h: &h,
            dh: &dh,
            g: &g,
            exact: None,
        };
        let ex = (1.0 - 1.0f64.cos() - 1.0).exp();
        assert!((m.reference(1.0, 1.0, 0.01) - ex).abs() < 1e-12);
    }
}
