use thiserror::Error;

use crate::geodesic::GeodesicPath;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("metric is singular: |alpha| = {alpha} >= 1")]
    Singular { alpha: f64 },

    #[error("internal error: {0}")]
    Internal(String),

    /// The integrated path left the working box. The samples computed before
    /// the exit are kept.
    #[error("geodesic left the working box at t = {exit_t}")]
    LeftBox {
        exit_t: f64,
        partial: Box<GeodesicPath>,
    },

    #[error("hamiltonian drift {drift:e} exceeded the instability threshold")]
    Instability { drift: f64 },

    #[error("shooting did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("shooting found distinct solutions with lengths {first} and {second}")]
    Ambiguity { first: f64, second: f64 },

    #[error("tube sampling accepted no points")]
    DegenerateTube,

    #[error("quadrature resolution insufficient: {0}")]
    Resolution(String),

    #[error("witness geodesic misses the focusing plane at {point:?}")]
    CounterexampleViolation { point: Vec<f64> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LabError {
    pub fn domain(msg: impl Into<String>) -> Self {
        LabError::Domain(msg.into())
    }

    /// Short stable tag, used in reports and by the C interface.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Domain(_) => "domain",
            LabError::Singular { .. } => "singular",
            LabError::Internal(_) => "internal",
            LabError::LeftBox { .. } => "left_box",
            LabError::Instability { .. } => "instability",
            LabError::Convergence { .. } => "convergence",
            LabError::Ambiguity { .. } => "ambiguity",
            LabError::DegenerateTube => "degenerate_tube",
            LabError::Resolution(_) => "resolution",
            LabError::CounterexampleViolation { .. } => "counterexample_violation",
            LabError::Config(_) => "config",
            LabError::Io(_) => "io",
        }
    }
}
