use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular system: smallest pivot {smallest:e} below threshold relative to largest {largest:e}")]
    Singular { smallest: f64, largest: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("step size {eta} outside validity range ({lo}, {hi})")]
    StepOutOfRange { eta: f64, lo: f64, hi: f64 },

    #[error("sparsity level k={k} out of range for dimension {d}")]
    SparsityOutOfRange { k: usize, d: usize },

    #[error("missing constant for bound: {0}")]
    MissingConstant(&'static str),

    #[error("trace does not match the bound's requirements: {0}")]
    PresetMismatch(String),

    #[error("no convergence within {0} rounds")]
    NoConvergence(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
