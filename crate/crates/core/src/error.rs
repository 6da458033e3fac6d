use thiserror::Error;

/// Errors produced by kernel, attention, spectral, graph and model routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar parameter is outside its documented domain.
    #[error("invalid parameter {name}: {reason} (got {value})")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
        value: f64,
    },

    /// Matrix or vector shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An input carried NaN or infinite entries.
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    /// A row became all-zero during normalization where that is not allowed.
    #[error("degenerate row {row}: no positive unmasked entry to normalize")]
    DegenerateRow { row: usize },

    /// A matrix expected to be symmetric deviates beyond tolerance.
    #[error("matrix not symmetric: max |a_ij - a_ji| = {max_asymmetry:.3e} exceeds {tol:.3e}")]
    NotSymmetric { max_asymmetry: f64, tol: f64 },

    /// A degree (row sum) required to be positive is zero or negative.
    #[error("zero or negative degree at row {row}")]
    ZeroDegree { row: usize },

    /// The kernel matrix splits into numerically disconnected blocks.
    #[error("disconnected kernel: second eigenvalue {eta1} is 1 within tolerance")]
    DisconnectedKernel { eta1: f64 },

    /// A quantity that must be positive for the computation degenerated.
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    /// Training loss exploded relative to its initial value.
    #[error("training diverged at epoch {epoch}: loss {loss:.3e} exceeds 10x initial {initial:.3e}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    /// Forward pass produced NaN; aborted with context.
    #[error("NaN encountered in {0}")]
    NanProduced(&'static str),

    /// Checkpoint or other serialized state could not be decoded.
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
