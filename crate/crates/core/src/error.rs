use thiserror::Error;

#[derive(Debug, Error)]
pub enum VbppError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("row {row}: coordinate {dim} = {value} outside [{lo}, {hi}]")]
    OutOfBounds {
        row: usize,
        dim: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("G-tilde argument must be nonpositive, got {0}")]
    SpecfunDomain(f64),

    #[error("G-tilde series failed to converge for |z| = {0}")]
    SpecfunConvergence(f64),

    #[error("Cholesky factorization of {0} failed")]
    Cholesky(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("model/data mismatch: {0}")]
    Mismatch(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = VbppError> = std::result::Result<T, E>;
