use thiserror::Error;

/// Errors raised by the spectral laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("unsupported dimension: {0}")]
    Dimension(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("no convergence after {iterations} iterations (best residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("ill-posed problem: {0}")]
    IllPosed(String),
    #[error("Feshbach reduction invalid: 1 + Gamma is numerically singular (smallest singular value {0:.3e})")]
    ReductionInvalid(f64),
    #[error("eigenvalue crossing: {0}")]
    Crossing(String),
    #[error("degenerate choice: {0}")]
    Degenerate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("finite-difference step: {0}")]
    StepSize(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed input, configuration or files.
    Config,
    /// Solver or numerical failure.
    Numerical,
    /// A mathematical hypothesis of the experiment does not hold.
    Hypothesis,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::Shape(_)
            | Error::Data(_)
            | Error::Input(_)
            | Error::Dimension(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorClass::Config,
            Error::Capacity(_)
            | Error::Convergence { .. }
            | Error::ReductionInvalid(_)
            | Error::Crossing(_)
            | Error::StepSize(_)
            | Error::InsufficientData(_) => ErrorClass::Numerical,
            Error::Model(_)
            | Error::Precondition(_)
            | Error::IllPosed(_)
            | Error::Degenerate(_)
            | Error::Geometry(_) => ErrorClass::Hypothesis,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
