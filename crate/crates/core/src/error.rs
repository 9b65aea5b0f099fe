use thiserror::Error;

/// Errors raised by the estimation engine and its helpers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate support: {0}")]
    DegenerateSupport(String),

    #[error("degenerate mixing-weight update: {0}")]
    DegenerateUpdate(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("empty data")]
    EmptyData,

    #[error("support mismatch: {0}")]
    SupportMismatch(String),

    #[error("parameter on the boundary: {0}")]
    Boundary(String),

    #[error("matrix is singular or ill-conditioned (condition number {0:e})")]
    Singular(f64),

    #[error("estimate is not stationary (gradient norm {0:e})")]
    NotStationary(f64),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
