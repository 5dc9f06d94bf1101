//! Crate error type. Variants are grouped so callers (notably the CLI) can
//! map them onto the config / data / divergence exit-code classes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch: {context} (expected {expected}, got {got})")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("parameter fingerprint mismatch: {expected:#018x} vs {got:#018x}")]
    FingerprintMismatch { expected: u64, got: u64 },

    #[error("zero-norm vector in {context}")]
    ZeroNorm { context: String },

    #[error("interpolation coefficient out of range: {value}")]
    CoeffOutOfRange { value: f64 },

    #[error("label {label} out of range (classes: {classes})")]
    LabelOutOfRange { label: u32, classes: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed data: {0}")]
    MalformedData(String),

    #[error("training diverged at epoch {epoch}{}", endpoint.map(|i| format!(" (endpoint {i})")).unwrap_or_default())]
    Divergence { epoch: usize, endpoint: Option<usize> },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CoreError {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        CoreError::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        CoreError::NonFinite { context: context.into() }
    }

    pub fn zero_norm(context: impl Into<String>) -> Self {
        CoreError::ZeroNorm { context: context.into() }
    }

    /// True for errors caused by malformed or inconsistent input data, as
    /// opposed to configuration or numeric failures.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            CoreError::MalformedData(_)
                | CoreError::LabelOutOfRange { .. }
                | CoreError::FingerprintMismatch { .. }
                | CoreError::Io(_)
                | CoreError::Empty(_)
        )
    }
}
