use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use elastodyn::config::{parse_refine, RunConfig};
use elastodyn::driver::{self, StabilitySweep};
use elastodyn::stability::log_grid;
use elastodyn::Scheme;

/// Semi-implicit BDF2 solver for incompressible Neo-Hookean elastodynamics.
#[derive(Parser, Debug)]
#[command(name = "elastodyn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario, writing series.csv and VTK snapshots.
    Run(RunArgs),
    /// Self-convergence study under time-step halving.
    Converge {
        #[command(flatten)]
        run: RunArgs,
        /// Number of time-step levels.
        #[arg(long, default_value_t = 4)]
        levels: usize,
    },
    /// Spectral radius sweep and maximum stable step of the model problem.
    Stability(StabilityArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// key = value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// unit_square_bf, unit_square_iv, unit_square_tr, cook or column.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    nu: Option<f64>,
    /// msbdf2 or febdf2.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long, conflicts_with = "cfl")]
    dt: Option<f64>,
    /// Courant number against the shear wave speed.
    #[arg(long)]
    cfl: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Elements per axis, e.g. 16,16 or 4x4x24.
    #[arg(long)]
    refine: Option<String>,
    /// quadratic or liu.
    #[arg(long)]
    volumetric: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// VTK snapshot stride in steps; 0 disables snapshots.
    #[arg(long)]
    snapshot_stride: Option<usize>,
    /// Reproducible output: no timing information is written.
    #[arg(long)]
    deterministic: bool,
    /// Use the uncorrected pressure-velocity coupling block.
    #[arg(long)]
    literal_blocks: bool,
    /// Keep the consistent velocity mass instead of lumping it.
    #[arg(long)]
    consistent_mass: bool,
}

impl RunArgs {
    fn to_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(s) = &self.scenario {
            c.scenario = s.parse()?;
        }
        if let Some(v) = self.nu {
            c.nu = v;
        }
        if let Some(s) = &self.scheme {
            c.scheme = s.parse()?;
        }
        if self.dt.is_some() {
            c.dt = self.dt;
            c.cfl = None;
        }
        if self.cfl.is_some() {
            c.cfl = self.cfl;
            c.dt = None;
        }
        if self.t_end.is_some() {
            c.t_end = self.t_end;
        }
        if let Some(r) = &self.refine {
            c.refine = Some(parse_refine(r)?);
        }
        if let Some(v) = &self.volumetric {
            c.volumetric = Some(v.parse()?);
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        if let Some(s) = self.snapshot_stride {
            c.snapshot_stride = s;
        }
        c.deterministic |= self.deterministic;
        c.literal_blocks |= self.literal_blocks;
        c.consistent_mass |= self.consistent_mass;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct StabilityArgs {
    #[arg(long, default_value = "febdf2")]
    scheme: String,
    /// Comma-separated lambda values.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    lambda: Vec<f64>,
    /// Comma-separated multiples of lambda for c.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,0.75,1,10,100")]
    c: Vec<f64>,
    #[arg(long, default_value_t = 1e-4)]
    dt_min: f64,
    #[arg(long, default_value_t = 10.0)]
    dt_max: f64,
    #[arg(long, default_value_t = 200)]
    dt_points: usize,
    /// Relative bisection tolerance for the maximum stable step.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value = "out/stability")]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    driver::init_thread_pool()?;
    match cli.command {
        Command::Run(args) => {
            let cfg = args.to_config()?;
            let start = std::time::Instant::now();
            let s = driver::cmd_run(&cfg)?;
            println!("{} steps of dt = {:e}, {} Krylov iterations", s.steps, s.dt, s.total_krylov_iterations);
            if let Some(r) = s.final_record {
                println!("t = {:e}  E = {:e}  volume = {:e}  |J-1|_inf = {:e}", r.t, r.energy_total, r.volume, r.vol_err_linf);
            }
            println!("series: {}", s.series_path.display());
            if !cfg.deterministic {
                println!("wall time {:.3} s", start.elapsed().as_secs_f64());
            }
        }
        Command::Converge { run, levels } => {
            let cfg = run.to_config()?;
            let t = driver::cmd_converge(&cfg, levels)?;
            println!("field norm fitted_order");
            for (fi, f) in driver::FIELDS.iter().enumerate() {
                for (ni, n) in ["L1", "L2", "Linf"].iter().enumerate() {
                    println!("{f} {n} {:.3}", t.fitted_order(fi, ni));
                }
            }
            println!("tables in {}", cfg.out.display());
        }
        Command::Stability(a) => {
            let scheme: Scheme = a.scheme.parse()?;
            let sweep = StabilitySweep {
                scheme,
                lambdas: a.lambda,
                c_multiples: a.c,
                dts: log_grid(a.dt_min, a.dt_max, a.dt_points.max(1)),
                tol_dt: a.tol,
            };
            driver::cmd_stability(&sweep, &a.out)?;
            println!("rho.csv and dt_max.csv in {}", a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
