use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while building, integrating, training or analysing networks.
#[derive(Debug, Error)]
pub enum PchnError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("integration diverged at step {step}: non-finite value in {what}")]
    Diverged { step: u64, what: &'static str },

    #[error("weights are frozen; slow dynamics cannot be stepped")]
    WeightsFrozen,

    #[error("state is not an equilibrium of the target (residual {residual:.3e}, distance to target {distance:.3e})")]
    NotAnEquilibrium { residual: f64, distance: f64 },

    #[error("activation is not differentiable at state component {index} (value {value:e})")]
    NonDifferentiable { index: usize, value: f64 },

    #[error("pattern entry {value} at ({row}, {col}) is not +1 or -1")]
    NonBinary { row: usize, col: usize, value: f64 },

    #[error("operation not supported for {0} targets")]
    UnsupportedKind(&'static str),

    #[error("malformed checkpoint, line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },

    #[error("eigenvalue computation did not converge")]
    Eigen,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, PchnError>;

impl PchnError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PchnError::Io {
            path: path.into(),
            source,
        }
    }
}
