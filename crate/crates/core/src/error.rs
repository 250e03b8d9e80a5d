use std::io;

/// Errors produced by the sensing pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate reference at subcarrier {subcarrier}, frame {frame} (|ref| = {magnitude:e})")]
    DegenerateReference {
        subcarrier: usize,
        frame: usize,
        magnitude: f64,
    },

    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("insufficient data for {what}: need at least {required}, got {actual}")]
    InsufficientData {
        what: &'static str,
        required: usize,
        actual: usize,
    },

    #[error("no spectral bins inside [{low_hz}, {high_hz}] Hz; window too short")]
    BandResolution { low_hz: f64, high_hz: f64 },

    #[error("no usable subcarrier: every subcarrier is masked")]
    NoUsableSubcarrier,

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("corrupt input: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
