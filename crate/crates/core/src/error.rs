use thiserror::Error;

/// Errors raised by the solvers, generators and file formats in this crate.
#[derive(Debug, Error)]
pub enum ThError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index {index} out of range for {len} columns")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("mask entry {value} at position {position} is not binary")]
    NonBinaryMask { position: usize, value: f64 },

    /// A Cholesky pivot fell below `1e-12 * max diagonal`.
    #[error("near-singular system: pivot {pivot:.3e} below threshold {threshold:.3e} (condition estimate {condition:.3e})")]
    NearSingular {
        pivot: f64,
        threshold: f64,
        condition: f64,
    },

    #[error("free block of size {card} exceeds the number of measurements {m}")]
    CardinalityExceeded { card: usize, m: usize },

    #[error("initial surrogate value {value} is not below the bound {bound}")]
    InitialBound { value: f64, bound: f64 },

    #[error("size guard: {0}")]
    SizeGuard(String),

    #[error("zero vector not allowed: {0}")]
    ZeroVector(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ThError>;
