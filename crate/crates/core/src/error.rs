use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point {point:?} lies outside the window root region")]
    OutOfWindow { point: Vec<f64> },

    #[error("level {level} outside window range [{coarse}, {fine}]")]
    LevelOutOfRange { level: i32, coarse: i32, fine: i32 },

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid exponents: {0}")]
    InvalidExponents(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
