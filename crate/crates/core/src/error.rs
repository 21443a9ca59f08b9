use num_complex::Complex64;
use thiserror::Error;

/// Failures surfaced by the solvers and special functions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("argument {at} lies within {distance:e} of a pole")]
    PoleProximity { at: Complex64, distance: f64 },

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("invalid contour: {0}")]
    InvalidContour(String),

    #[error("fixed-point iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("driving-term singularity at {at} lies within {distance:e} of the contour")]
    SingularDriving { at: Complex64, distance: f64 },

    #[error("point {at} is outside the domain: {reason}")]
    OutOfDomain { at: Complex64, reason: String },

    #[error("found {found} Bethe roots, expected {expected}")]
    RootCountMismatch { found: usize, expected: usize },

    #[error("Newton iteration diverged: {0}")]
    NewtonDivergence(String),

    #[error("roots {0} and {1} collided")]
    RootCollision(Complex64, Complex64),

    #[error("|q^alpha - q^-alpha| = {0:e} is below the configured floor")]
    AlphaSingular(f64),

    #[error("measure is singular at node {node}: |1 + a| = {value:e}")]
    MeasureSingular { node: Complex64, value: f64 },

    #[error("linear system is singular")]
    SingularMatrix,

    #[error("parameter {nu} lies {distance:e} from the contour (minimum {required:e})")]
    NuTooCloseToContour { nu: Complex64, distance: f64, required: f64 },

    #[error("measure mismatch: {0}")]
    MeasureMismatch(String),

    #[error("exact diagonalization limited to N <= 6, got {0}")]
    DimensionTooLarge(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
