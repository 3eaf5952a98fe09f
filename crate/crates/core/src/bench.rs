//! Benchmark scenarios: unit square (body force, initial velocity,
//! traction), Cook's membrane and the twisting column.

use crate::error::{Error, Result};
use crate::fem::FeSpace;
use crate::material::{MaterialParams, VolumetricModel};
use crate::mesh::{generate_mesh, taylor_hood_dofmap, FacetTag, Geometry, Side};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioName {
    UnitSquareBF,
    UnitSquareIV,
    UnitSquareTr,
    Cook,
    Column,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 5] = [
        ScenarioName::UnitSquareBF,
        ScenarioName::UnitSquareIV,
        ScenarioName::UnitSquareTr,
        ScenarioName::Cook,
        ScenarioName::Column,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::UnitSquareBF => "unit_square_bf",
            ScenarioName::UnitSquareIV => "unit_square_iv",
            ScenarioName::UnitSquareTr => "unit_square_tr",
            ScenarioName::Cook => "cook",
            ScenarioName::Column => "column",
        }
    }
}

impl std::fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScenarioName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Self::ALL
            .into_iter()
            .find(|n| n.as_str().replace('_', "") == key)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}'")))
    }
}

/// Initial velocity fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialVelocity<T> {
    Zero,
    /// `(0, -sin(pi X2 / 2))`.
    SquareShock,
    /// `amplitude sin(pi X3 / length) (-X2, X1, 0)`.
    Twist { amplitude: T, length: T },
}

impl<T: Real> InitialVelocity<T> {
    pub fn eval(&self, x: [T; 3]) -> [T; 3] {
        match *self {
            InitialVelocity::Zero => [T::zero(); 3],
            InitialVelocity::SquareShock => [T::zero(), -(T::PI() * x[1] / T::lit(2.0)).sin(), T::zero()],
            InitialVelocity::Twist { amplitude, length } => {
                let a = amplitude * (T::PI() * x[2] / length).sin();
                [-a * x[1], a * x[0], T::zero()]
            }
        }
    }
}

/// A complete benchmark configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub name: ScenarioName,
    pub geometry: Geometry,
    pub refinement: [usize; 3],
    pub young: T,
    pub nu: T,
    pub rho0: T,
    pub vol_model: VolumetricModel,
    pub kappa_scale: T,
    /// Body force per unit mass is `body_force_rate * t`.
    pub body_force_rate: Option<[T; 3]>,
    /// Constant traction on `TractionLoaded` facets.
    pub traction: Option<[T; 3]>,
    pub initial_velocity: InitialVelocity<T>,
    pub t_end: T,
    pub tags: Vec<(Side, FacetTag)>,
    /// Reference point whose velocity is sampled each step.
    pub probe: Option<[T; 3]>,
}

impl<T: Real> Scenario<T> {
    /// Scenario defaults with the given Poisson ratio.
    pub fn new(name: ScenarioName, nu: T) -> Self {
        let z = T::zero();
        let square = |bf, tr, iv, tags| Scenario {
            name,
            geometry: Geometry::UnitSquare,
            refinement: [16, 16, 1],
            young: T::lit(100.0),
            nu,
            rho0: T::one(),
            vol_model: VolumetricModel::Quadratic,
            kappa_scale: T::lit(2.0),
            body_force_rate: bf,
            traction: tr,
            initial_velocity: iv,
            t_end: T::lit(0.1),
            tags,
            probe: None,
        };
        match name {
            ScenarioName::UnitSquareBF => square(Some([z, T::lit(-25.0), z]), None, InitialVelocity::Zero, vec![]),
            ScenarioName::UnitSquareIV => square(None, None, InitialVelocity::SquareShock, vec![]),
            ScenarioName::UnitSquareTr => square(
                None,
                Some([z, T::lit(-2.5), z]),
                InitialVelocity::Zero,
                vec![(Side::YMax, FacetTag::TractionLoaded)],
            ),
            ScenarioName::Cook => Scenario {
                name,
                geometry: Geometry::CooksMembrane,
                refinement: [8, 8, 1],
                young: T::lit(2500.0),
                nu,
                rho0: T::lit(0.1),
                vol_model: VolumetricModel::Quadratic,
                kappa_scale: T::lit(2.0),
                body_force_rate: None,
                traction: Some([z, T::lit(62.5), z]),
                initial_velocity: InitialVelocity::Zero,
                t_end: T::lit(0.1),
                tags: vec![],
                probe: Some([T::lit(48.0), T::lit(60.0), z]),
            },
            ScenarioName::Column => Scenario {
                name,
                geometry: Geometry::Column,
                refinement: [4, 4, 24],
                young: T::lit(1.2e7),
                nu,
                rho0: T::lit(1.1),
                vol_model: VolumetricModel::Quadratic,
                kappa_scale: T::lit(2.0),
                body_force_rate: None,
                traction: None,
                initial_velocity: InitialVelocity::Twist {
                    amplitude: T::lit(1500.0),
                    length: T::lit(12.0),
                },
                t_end: T::lit(0.02),
                tags: vec![],
                probe: None,
            },
        }
    }

    pub fn material(&self) -> Result<MaterialParams<T>> {
        MaterialParams::from_e_nu(self.young, self.nu, self.rho0, self.vol_model, self.kappa_scale)
    }

    /// Mesh with the scenario's tags, zero velocity on `Fixed` facets.
    pub fn build_space(&self) -> Result<FeSpace<T>> {
        let mut mesh = generate_mesh(self.geometry, self.refinement)?;
        for &(side, tag) in &self.tags {
            mesh.set_side_tag(side, tag);
        }
        if self.traction.is_some() && !mesh.has_tag(FacetTag::TractionLoaded) {
            return Err(Error::Config(format!("scenario {} has a traction but no loaded facets", self.name)));
        }
        let dofmap = taylor_hood_dofmap(&mesh, &[(FacetTag::Fixed, [T::zero(); 3])])?;
        FeSpace::new(mesh, dofmap)
    }

    pub fn body_force(&self, _x: [T; 3], t: T) -> [T; 3] {
        match self.body_force_rate {
            Some(r) => [r[0] * t, r[1] * t, r[2] * t],
            None => [T::zero(); 3],
        }
    }

    pub fn traction_at(&self, _x: [T; 3], _t: T) -> [T; 3] {
        self.traction.unwrap_or([T::zero(); 3])
    }

    /// Index of the mesh node closest to the probe point.
    pub fn probe_node(&self, space: &FeSpace<T>) -> Option<usize> {
        let p = self.probe?;
        space
            .mesh
            .nodes
            .iter()
            .enumerate()
            .map(|(i, x)| (i, (0..3).map(|c| (x[c] - p[c]) * (x[c] - p[c])).sum::<T>()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
    }
}

/// Looks a scenario up by name.
pub fn scenario<T: Real>(name: &str, nu: T) -> Result<Scenario<T>> {
    Ok(Scenario::new(name.parse()?, nu))
}
