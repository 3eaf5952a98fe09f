//! Batch commands behind the command-line front-end.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::bench::Scenario;
use crate::config::RunConfig;
use crate::diagnostics::{self, DiagnosticRecord, FieldKind, Norm};
use crate::error::{Error, Result};
use crate::fem::{AssemblyOptions, FeSpace, Loads, Scheme, TimeState};
use crate::integrators::{run_simulation, Observer, SchemeConfig, SimulationResult, StepContext};
use crate::material;
use crate::output;
use crate::solvers::{SchurSolveOptions, SolveReport};
use crate::stability;

/// Caps the global thread pool at `SOLVER_THREADS` when that variable is
/// set. Results do not depend on the thread count.
pub fn init_thread_pool() -> Result<()> {
    if let Ok(v) = std::env::var("SOLVER_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("SOLVER_THREADS = '{v}' is not a count")))?;
        // a pool may already exist (e.g. under a test harness)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    Ok(())
}

/// Runs a scenario and returns its space and final state.
pub fn simulate(
    scenario: &Scenario<f64>,
    scheme: &SchemeConfig<f64>,
    assembly: AssemblyOptions,
    solver: SchurSolveOptions,
    observers: &mut [&mut dyn Observer<f64>],
) -> Result<(FeSpace<f64>, SimulationResult<f64>)> {
    let space = scenario.build_space()?;
    let params = scenario.material()?;
    let bf = |x: [f64; 3], t: f64| scenario.body_force(x, t);
    let tr = |x: [f64; 3], t: f64| scenario.traction_at(x, t);
    let loads = Loads {
        body_force: scenario.body_force_rate.map(|_| &bf as &(dyn Fn([f64; 3], f64) -> [f64; 3] + Sync)),
        traction: scenario.traction.map(|_| &tr as &(dyn Fn([f64; 3], f64) -> [f64; 3] + Sync)),
    };
    let ctx = StepContext {
        space: &space,
        params: &params,
        loads,
        assembly,
        solver,
    };
    let u0 = vec![0.0; space.dofmap.n_velocity_dofs];
    let mut v0 = space.interpolate(|x| scenario.initial_velocity.eval(x));
    for (&d, &val) in &space.dofmap.constrained {
        v0[d] = val;
    }
    let result = run_simulation(&ctx, scheme, u0, v0, observers, 1)?;
    Ok((space, result))
}

/// Collects diagnostics rows in memory.
#[derive(Debug, Default)]
pub struct SeriesRecorder {
    pub rows: Vec<(usize, DiagnosticRecord<f64>, usize)>,
    params: Option<material::MaterialParams<f64>>,
}

impl SeriesRecorder {
    pub fn new(params: material::MaterialParams<f64>) -> Self {
        Self {
            rows: Vec::new(),
            params: Some(params),
        }
    }
}

impl Observer<f64> for SeriesRecorder {
    fn observe(&mut self, space: &FeSpace<f64>, state: &TimeState<f64>, report: Option<&SolveReport>) -> Result<()> {
        let params = self.params.as_ref().ok_or_else(|| Error::Usage("recorder without material".into()))?;
        let rec = diagnostics::record(space, params, state)?;
        self.rows.push((state.step, rec, report.map_or(0, |r| r.iterations)));
        Ok(())
    }
}

struct RunWriter {
    series: BufWriter<File>,
    probe: Option<(usize, BufWriter<File>)>,
    params: material::MaterialParams<f64>,
    out: PathBuf,
    snapshot_stride: usize,
    last: Option<DiagnosticRecord<f64>>,
}

impl Observer<f64> for RunWriter {
    fn observe(&mut self, space: &FeSpace<f64>, state: &TimeState<f64>, report: Option<&SolveReport>) -> Result<()> {
        let rec = diagnostics::record(space, &self.params, state)?;
        writeln!(self.series, "{}", output::series_row(state.step, &rec, report.map_or(0, |r| r.iterations)))?;
        if let Some((node, w)) = self.probe.as_mut() {
            let d = space.dim();
            let v: Vec<String> = (0..d).map(|c| format!("{:.16e}", state.v[*node * d + c])).collect();
            writeln!(w, "{},{:.16e},{}", state.step, state.t, v.join(","))?;
        }
        if self.snapshot_stride > 0 && state.step.is_multiple_of(self.snapshot_stride) {
            let path = self.out.join(format!("field_{:04}.vtk", state.step));
            let mut f = BufWriter::new(File::create(path)?);
            output::write_vtk(&mut f, space, state)?;
            f.flush()?;
        }
        self.last = Some(rec);
        Ok(())
    }
}

/// Summary of a `run`.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub dt: f64,
    pub final_record: Option<DiagnosticRecord<f64>>,
    pub total_krylov_iterations: usize,
    pub series_path: PathBuf,
}

/// Runs the configured scenario, writing `series.csv`, optional
/// `probe.csv` and `field_XXXX.vtk` snapshots to the output directory.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let scenario = cfg.build_scenario();
    let scheme = cfg.scheme_config(scenario.t_end)?;
    fs::create_dir_all(&cfg.out)?;
    let series_path = cfg.out.join("series.csv");
    let mut series = BufWriter::new(File::create(&series_path)?);
    writeln!(series, "{}", output::SERIES_HEADER)?;
    // probe node needs the mesh; build once more is cheap
    let probe = match scenario.probe {
        Some(_) => {
            let space = scenario.build_space()?;
            let node = scenario.probe_node(&space).expect("probe point");
            let mut w = BufWriter::new(File::create(cfg.out.join("probe.csv"))?);
            let comps = ["vx", "vy", "vz"][..space.dim()].join(",");
            writeln!(w, "step,t,{comps}")?;
            Some((node, w))
        }
        None => None,
    };
    let mut writer = RunWriter {
        series,
        probe,
        params: scenario.material()?,
        out: cfg.out.clone(),
        snapshot_stride: cfg.snapshot_stride,
        last: None,
    };
    let result = simulate(&scenario, &scheme, cfg.assembly(), cfg.solver, &mut [&mut writer]);
    writer.series.flush()?;
    if let Some((_, w)) = writer.probe.as_mut() {
        w.flush()?;
    }
    let (_, res) = result?;
    Ok(RunSummary {
        steps: res.steps,
        dt: res.dt,
        final_record: writer.last,
        total_krylov_iterations: res.total_krylov_iterations,
        series_path,
    })
}

/// Self-convergence errors between consecutive time-step levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub dts: Vec<f64>,
    /// `errors[pair][field][norm]`, fields `U, V, p`, norms `L1, L2, Linf`.
    pub errors: Vec<[[f64; 3]; 3]>,
}

pub const FIELDS: [&str; 3] = ["U", "V", "p"];
pub const NORMS: [Norm; 3] = [Norm::L1, Norm::L2, Norm::LInf];
const NORM_NAMES: [&str; 3] = ["L1", "L2", "Linf"];

impl ConvergenceTable {
    /// Pairwise orders `log2(e_k / e_{k+1})` for one field and norm.
    pub fn orders(&self, field: usize, norm: usize) -> Vec<f64> {
        self.errors
            .windows(2)
            .map(|w| diagnostics::order(w[0][field][norm], w[1][field][norm]))
            .collect()
    }

    /// Least-squares order over all pairs.
    pub fn fitted_order(&self, field: usize, norm: usize) -> f64 {
        let e: Vec<f64> = self.errors.iter().map(|x| x[field][norm]).collect();
        diagnostics::fitted_order(&e)
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(dir.join("convergence.csv"))?);
        let mut head = vec!["pair".to_string(), "dt_coarse".into(), "dt_fine".into()];
        for f in FIELDS {
            for n in NORM_NAMES {
                head.push(format!("{f}_{n}"));
            }
        }
        writeln!(w, "{}", head.join(","))?;
        for (k, e) in self.errors.iter().enumerate() {
            let mut row = vec![k.to_string(), format!("{:.16e}", self.dts[k]), format!("{:.16e}", self.dts[k + 1])];
            for f in e {
                for v in f {
                    row.push(format!("{v:.16e}"));
                }
            }
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("orders.csv"))?);
        writeln!(w, "field,norm,fitted,pairwise")?;
        for (fi, f) in FIELDS.iter().enumerate() {
            for (ni, n) in NORM_NAMES.iter().enumerate() {
                let pw: Vec<String> = self.orders(fi, ni).iter().map(|o| format!("{o:.6}")).collect();
                let fitted = if self.errors.len() >= 2 { self.fitted_order(fi, ni) } else { f64::NAN };
                writeln!(w, "{f},{n},{fitted:.6},{}", pw.join(";"))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Final states at `dt, dt/2, ..., dt/2^(n_levels-1)` and the
/// self-convergence table of consecutive pairs.
pub fn convergence_study(
    scenario: &Scenario<f64>,
    base: &SchemeConfig<f64>,
    assembly: AssemblyOptions,
    solver: SchurSolveOptions,
    n_levels: usize,
) -> Result<ConvergenceTable> {
    if n_levels < 2 {
        return Err(Error::Usage(format!("a convergence study needs at least 2 levels, got {n_levels}")));
    }
    let space = scenario.build_space()?;
    let c_mu = material::wave_speeds(&scenario.material()?, 1.0)?.0;
    let (_, dt0) = base.resolve(space.mesh.h_min, c_mu)?;
    let dts: Vec<f64> = (0..n_levels).map(|k| dt0 / f64::powi(2.0, k as i32)).collect();
    let states: Vec<Result<TimeState<f64>>> = dts
        .par_iter()
        .map(|&dt| {
            let cfg = SchemeConfig {
                dt: Some(dt),
                cfl: None,
                ..*base
            };
            simulate(scenario, &cfg, assembly, solver, &mut []).map(|(_, r)| r.state)
        })
        .collect();
    let states: Vec<TimeState<f64>> = states.into_iter().collect::<Result<_>>()?;
    let mut errors = Vec::new();
    for w in states.windows(2) {
        let mut e = [[0.0; 3]; 3];
        for (ni, &norm) in NORMS.iter().enumerate() {
            e[0][ni] = diagnostics::self_convergence(&space, &w[0].u, &w[1].u, FieldKind::Vector, norm)?;
            e[1][ni] = diagnostics::self_convergence(&space, &w[0].v, &w[1].v, FieldKind::Vector, norm)?;
            e[2][ni] = diagnostics::self_convergence(&space, &w[0].p, &w[1].p, FieldKind::Pressure, norm)?;
        }
        errors.push(e);
    }
    Ok(ConvergenceTable { dts, errors })
}

/// `converge` command: writes `convergence.csv` and `orders.csv`.
pub fn cmd_converge(cfg: &RunConfig, n_levels: usize) -> Result<ConvergenceTable> {
    cfg.validate()?;
    let scenario = cfg.build_scenario();
    let scheme = cfg.scheme_config(scenario.t_end)?;
    let table = convergence_study(&scenario, &scheme, cfg.assembly(), cfg.solver, n_levels)?;
    fs::create_dir_all(&cfg.out)?;
    table.write_csv(&cfg.out)?;
    Ok(table)
}

/// Stability sweep settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySweep {
    pub scheme: Scheme,
    pub lambdas: Vec<f64>,
    /// `c` as multiples of `lambda`.
    pub c_multiples: Vec<f64>,
    pub dts: Vec<f64>,
    pub tol_dt: f64,
}

/// `stability` command: writes `rho.csv` and `dt_max.csv`.
pub fn cmd_stability(sweep: &StabilitySweep, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let points = stability::sweep(sweep.scheme, &sweep.lambdas, &sweep.c_multiples, &sweep.dts)?;
    let mut w = BufWriter::new(File::create(out.join("rho.csv"))?);
    writeln!(w, "lambda,c,dt,rho")?;
    for p in &points {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", p.lambda, p.c, p.dt, p.rho)?;
    }
    w.flush()?;
    let mut w = BufWriter::new(File::create(out.join("dt_max.csv"))?);
    writeln!(w, "lambda,c,dt_max")?;
    for &l in &sweep.lambdas {
        for &cm in &sweep.c_multiples {
            let dt = match stability::max_stable_dt(sweep.scheme, l, cm * l, sweep.tol_dt) {
                Ok(dt) => format!("{dt:.16e}"),
                Err(Error::UnconditionallyUnstable(_)) => "unstable".to_string(),
                Err(e) => return Err(e),
            };
            writeln!(w, "{:.16e},{:.16e},{dt}", l, cm * l)?;
        }
    }
    w.flush()?;
    Ok(())
}
