use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("infeasible absorption: Sabine coefficient {alpha:.4} >= 1 for RT60 {rt60_s} s")]
    InfeasibleAbsorption { alpha: f64, rt60_s: f64 },

    #[error("signal of {signal_len} samples is shorter than the impulse response ({rir_len} taps)")]
    SignalTooShort { signal_len: usize, rir_len: usize },

    #[error("undefined contrast: no bins labelled {0}")]
    EmptyClass(&'static str),

    #[error("insufficient items for branch {branch}: {available} eligible, batch size {batch_size}")]
    InsufficientItems {
        branch: char,
        available: usize,
        batch_size: usize,
    },

    #[error("non-finite gradient for parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier, used in machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::InvalidGeometry(_) => "invalid_geometry",
            Error::UnsupportedGeometry(_) => "unsupported_geometry",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InfeasibleAbsorption { .. } => "infeasible_absorption",
            Error::SignalTooShort { .. } => "signal_too_short",
            Error::EmptyClass(_) => "undefined_contrast",
            Error::InsufficientItems { .. } => "insufficient_items",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Wav(_) => "wav",
            Error::Json(_) => "json",
        }
    }
}
