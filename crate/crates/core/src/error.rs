use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate covariance (det = {det:e})")]
    DegenerateCovariance { det: f64 },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("non-finite parameter after step {step}")]
    NonFinite { step: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("k-means needs at least {clusters} points, got {points}")]
    InsufficientPoints { points: usize, clusters: usize },

    #[error("{field} code {value} does not fit in {bits} bits")]
    CodeOutOfRange {
        field: &'static str,
        value: u32,
        bits: u32,
    },

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("unknown bitstream version {0}")]
    UnknownVersion(u8),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("entropy-coded stream exhausted")]
    StreamExhausted,

    #[error("corrupt entropy-coded stream: {0}")]
    CorruptStream(String),
}

impl Error {
    /// True for errors raised while parsing or producing a bitstream.
    pub fn is_codec(&self) -> bool {
        matches!(
            self,
            Error::CodeOutOfRange { .. }
                | Error::CorruptHeader(_)
                | Error::UnknownVersion(_)
                | Error::TruncatedPayload { .. }
                | Error::StreamExhausted
                | Error::CorruptStream(_)
        )
    }

    /// True for numerical failures during fitting or fine-tuning.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateCovariance { .. } | Error::NonFinite { .. }
        )
    }
}
