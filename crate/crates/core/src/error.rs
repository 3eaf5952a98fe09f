use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("inverted element {element}: J = {jacobian:e}")]
    InvertedElement { element: usize, jacobian: f64 },

    #[error("nonpositive lumped mass {value:e} at row {row}")]
    NonPositiveLumpedMass { row: usize, value: f64 },

    #[error("indefinite operator: p^T A p = {curvature:e} at iteration {iteration}")]
    Indefinite { iteration: usize, curvature: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("solver did not converge in stage {stage:?}: {iterations} iterations, residual {residual:e}")]
    NotConverged {
        stage: crate::solvers::SolveStage,
        iterations: usize,
        residual: f64,
    },

    #[error("step {step} (t = {time:e})")]
    Step {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("unconditionally unstable: spectral radius {0:e} at the lower end of the bracket")]
    UnconditionallyUnstable(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
