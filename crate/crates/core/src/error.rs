use thiserror::Error;

/// Errors raised by the simulator and the analytic model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("distance {distance_m} m lies outside the cell of radius {radius_m} m")]
    OutOfCell { distance_m: f64, radius_m: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("model format error at line {line}: {message}")]
    ModelFormat { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
