use crate::domain::Dimension;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A coordinate fell outside its configured domain interval.
    #[error("{dim} = {value} is outside [{lo}, {hi}]")]
    OutOfBounds {
        dim: Dimension,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// A numeric field was NaN or infinite.
    #[error("{field} must be finite, got {value}")]
    NonFinite { field: &'static str, value: f64 },

    /// A configuration value violated its documented constraints.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An operation that needs training data received none.
    #[error("dataset is empty")]
    EmptyDataset,

    /// A dataset or model file could not be parsed. Lines are 1-based; the
    /// header is line 1.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The file declared a schema this version does not understand.
    #[error("schema mismatch: expected {expected:?}, found {found:?}")]
    SchemaMismatch { expected: String, found: String },

    /// The Gram matrix stayed non-positive-definite even after jitter
    /// escalation.
    #[error("Gram matrix factorization failed (jitter escalated to {max_jitter:e})")]
    Factorization { max_jitter: f64 },

    /// Predictive variance came out more negative than numerical noise allows.
    #[error("predictive variance {value} below the -1e-9 tolerance")]
    NegativeVariance { value: f64 },

    /// Two calibration endpoints share the same raw reading.
    #[error("degenerate calibration endpoints: both raw readings are {raw}")]
    DegenerateEndpoints { raw: f64 },

    /// A stored model failed its integrity check on load.
    #[error("model checksum mismatch for {what}: stored {stored}, recomputed {recomputed}")]
    ChecksumMismatch {
        what: &'static str,
        stored: f64,
        recomputed: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input rather than I/O or numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::OutOfBounds { .. }
                | Error::NonFinite { .. }
                | Error::InvalidConfig(_)
                | Error::EmptyDataset
                | Error::DegenerateEndpoints { .. }
        )
    }

    /// True for numerical failures (exit code 4 in the CLI).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Factorization { .. }
                | Error::NegativeVariance { .. }
                | Error::ChecksumMismatch { .. }
        )
    }
}
