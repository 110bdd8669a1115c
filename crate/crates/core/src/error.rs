use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ZeroNorm: quaternion norm {0:e} too small to normalize")]
    ZeroNorm(f64),
    #[error("InvalidRotation: orthonormality residual {0:e} exceeds tolerance")]
    InvalidRotation(f64),
    #[error("DegenerateVector: vector norm {0:e} too small for a direction")]
    DegenerateVector(f64),
    #[error("NonScalarRoot: backward root has shape {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("ParseError: line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("EmptyFile: no data lines in {0}")]
    EmptyFile(String),
    #[error("EmptyInput: {0}")]
    EmptyInput(&'static str),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("DimensionMismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("Divergence: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("UnknownFrame: {0}")]
    UnknownFrame(String),
    #[error("Checkpoint: {0}")]
    Checkpoint(String),
    #[error("Io")]
    Io(#[from] std::io::Error),
    #[error("Json")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
