use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("argument outside the domain of {function}: {detail}")]
    Domain { function: &'static str, detail: String },

    #[error("kernel evaluated at coincident points (distance {distance:e})")]
    SingularPoint { distance: f64 },

    #[error("evaluation point {index} lies too close to the boundary (distance {distance:e})")]
    NearBoundary { index: usize, distance: f64 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("singular linear system: {0}")]
    SingularMatrix(String),

    #[error("contour error at frequency index {index}: {detail}")]
    Contour { index: usize, detail: String },

    #[error("invalid parameter `{name}`: {detail}")]
    InvalidParameter { name: &'static str, detail: String },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            detail: detail.into(),
        }
    }
}
