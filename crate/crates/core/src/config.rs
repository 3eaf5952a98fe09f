//! Run configuration from flat `key = value` files.
//!
//! ```text
//! # comment
//! scenario.name = cook
//! scenario.nu = 0.5
//! scenario.refine = 16,16
//! scheme.name = febdf2
//! scheme.cfl = 0.5
//! output.dir = out/cook
//! ```

use std::path::{Path, PathBuf};

use crate::bench::{Scenario, ScenarioName};
use crate::error::{Error, Result};
use crate::fem::{AssemblyOptions, Scheme};
use crate::integrators::{SchemeConfig, Startup};
use crate::material::VolumetricModel;
use crate::solvers::{GmresOptions, SchurSolveOptions};

/// Everything `run` and `converge` need.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioName,
    pub nu: f64,
    pub refine: Option<[usize; 3]>,
    pub t_end: Option<f64>,
    pub volumetric: Option<VolumetricModel>,
    pub kappa_scale: Option<f64>,
    pub scheme: Scheme,
    pub dt: Option<f64>,
    pub cfl: Option<f64>,
    pub startup: Startup,
    pub solver: SchurSolveOptions,
    pub consistent_mass: bool,
    pub literal_blocks: bool,
    pub out: PathBuf,
    /// VTK snapshot every this many steps; 0 disables snapshots.
    pub snapshot_stride: usize,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioName::UnitSquareBF,
            nu: 0.4,
            refine: None,
            t_end: None,
            volumetric: None,
            kappa_scale: None,
            scheme: Scheme::Febdf2,
            dt: None,
            cfl: None,
            startup: Startup::default(),
            solver: SchurSolveOptions::default(),
            consistent_mass: false,
            literal_blocks: false,
            out: PathBuf::from("out"),
            snapshot_stride: 0,
            deterministic: false,
        }
    }
}

fn parse<F: std::str::FromStr>(key: &str, v: &str) -> Result<F> {
    v.parse().map_err(|_| Error::Config(format!("bad value '{v}' for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean '{v}' for {key}"))),
    }
}

/// Parses `"16,16"` or `"4x4x24"` into per-axis element counts.
pub fn parse_refine(v: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = v.split([',', 'x', 'X']).map(str::trim).filter(|s| !s.is_empty()).collect();
    if parts.is_empty() || parts.len() > 3 {
        return Err(Error::Config(format!("bad refinement '{v}'")));
    }
    let mut out = [1usize; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = parse("refine", p)?;
    }
    if parts.len() == 1 {
        out[1] = out[0];
    }
    Ok(out)
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "scenario.name" => self.scenario = v.parse()?,
            "scenario.nu" => self.nu = parse(key, v)?,
            "scenario.refine" => self.refine = Some(parse_refine(v)?),
            "scenario.t_end" => self.t_end = Some(parse(key, v)?),
            "scenario.volumetric" => self.volumetric = Some(v.parse()?),
            "scenario.kappa_scale" => self.kappa_scale = Some(parse(key, v)?),
            "scheme.name" => self.scheme = v.parse()?,
            "scheme.dt" => self.dt = Some(parse(key, v)?),
            "scheme.cfl" => self.cfl = Some(parse(key, v)?),
            "scheme.startup" => self.startup = v.parse()?,
            "solver.tol" => self.solver.gmres.tol = parse(key, v)?,
            "solver.restart" => self.solver.gmres.restart = parse(key, v)?,
            "solver.max_iter" => self.solver.gmres.max_iter = parse(key, v)?,
            "solver.preconditioner" => self.solver.preconditioner = v.parse()?,
            "solver.consistent_mass" => self.consistent_mass = parse_bool(key, v)?,
            "solver.literal_blocks" => self.literal_blocks = parse_bool(key, v)?,
            "output.dir" => self.out = PathBuf::from(v),
            "output.snapshot_stride" => self.snapshot_stride = parse(key, v)?,
            "output.deterministic" => self.deterministic = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn from_str_config(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines. A `[section]` line prefixes the keys
    /// that follow with `section.`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            let key = if section.is_empty() || k.contains('.') {
                k.to_string()
            } else {
                format!("{section}.{k}")
            };
            self.set(&key, v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_str_config(&std::fs::read_to_string(path)?)
    }

    /// The scenario with overrides applied.
    pub fn build_scenario(&self) -> Scenario<f64> {
        let mut s = Scenario::new(self.scenario, self.nu);
        if let Some(r) = self.refine {
            s.refinement = r;
        }
        if let Some(t) = self.t_end {
            s.t_end = t;
        }
        if let Some(m) = self.volumetric {
            s.vol_model = m;
        }
        if let Some(k) = self.kappa_scale {
            s.kappa_scale = k;
        }
        s
    }

    /// Scheme settings; FEBDF2 defaults to CFL 0.5, MSBDF2 needs a `dt`.
    pub fn scheme_config(&self, t_end: f64) -> Result<SchemeConfig<f64>> {
        let (dt, cfl) = match (self.dt, self.cfl, self.scheme) {
            (None, None, Scheme::Febdf2) => (None, Some(0.5)),
            (None, None, Scheme::Msbdf2) => {
                return Err(Error::Config("msbdf2 has no safe default CFL; set dt explicitly".into()))
            }
            other => (other.0, other.1),
        };
        let c = SchemeConfig {
            scheme: self.scheme,
            dt,
            cfl,
            t_end,
            startup: self.startup,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn assembly(&self) -> AssemblyOptions {
        AssemblyOptions {
            literal_blocks: self.literal_blocks,
            consistent_mass: self.consistent_mass,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > -1.0 && self.nu <= 0.5) {
            return Err(Error::Config(format!("nu = {} outside (-1, 0.5]", self.nu)));
        }
        let s = self.build_scenario();
        self.scheme_config(s.t_end)?;
        let g: GmresOptions = self.solver.gmres;
        if !(g.tol > 0.0) || g.restart == 0 || g.max_iter == 0 {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        Ok(())
    }
}
