use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid group structure: {0}")]
    InvalidGroups(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("problem too large: estimated {estimated} bytes exceeds cap of {cap} bytes")]
    MemoryCap { estimated: u64, cap: u64 },

    #[error("factorization failed even with jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("divergence: non-finite values at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
