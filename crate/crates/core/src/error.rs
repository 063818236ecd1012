use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("outside domain: {0}")]
    Domain(String),
    #[error("boundary metric not positive definite at x = {x}: smallest eigenvalue {min_eig:e}")]
    NotPositiveDefinite { x: f64, min_eig: f64 },
    #[error("step size collapsed at t = {t}")]
    StepSizeCollapse { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("step budget of {0} steps exhausted")]
    TooManySteps(usize),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GeoError>;
