//! Semi-implicit BDF2 time integration of Neo-Hookean elastodynamics with
//! Taylor-Hood (Q2/Q1) velocity-pressure elements, covering compressible,
//! nearly incompressible and fully incompressible materials.
//!
//! The numerical core is generic over the floating-point type (`f32` or
//! `f64`); the aliases below fix it to `f64`.

pub mod bench;
pub mod config;
pub mod diagnostics;
pub mod driver;
pub mod element;
pub mod error;
pub mod fem;
pub mod integrators;
pub mod material;
pub mod mesh;
pub mod output;
pub mod scalar;
pub mod solvers;
pub mod sparse;
pub mod stability;
pub mod tensor;

pub use bench::{Scenario, ScenarioName};
pub use error::{Error, Result};
pub use fem::{AssemblyOptions, BlockSystem, FeSpace, Scheme, StepKind, TimeState};
pub use integrators::{SchemeConfig, Startup};
pub use material::{MaterialParams, VolumetricModel};
pub use mesh::{DofMap, FacetTag, Geometry, MixedMesh, Side};
pub use scalar::Real;
pub use sparse::CsrMatrix;

pub type MaterialParams64 = MaterialParams<f64>;
pub type MixedMesh64 = MixedMesh<f64>;
pub type DofMap64 = DofMap<f64>;
pub type FeSpace64 = FeSpace<f64>;
pub type TimeState64 = TimeState<f64>;
pub type BlockSystem64 = BlockSystem<f64>;
pub type CsrMatrix64 = CsrMatrix<f64>;
pub type Scenario64 = Scenario<f64>;
pub type SchemeConfig64 = SchemeConfig<f64>;
