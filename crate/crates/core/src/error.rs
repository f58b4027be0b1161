use thiserror::Error;

/// Errors raised across the certificate toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A theorem precondition (sample size, norm cap, ...) is violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The requested target margin loss cannot be met by any positive margin.
    #[error("margin unachievable: {0}")]
    MarginUnachievable(String),

    /// No positive hard margin exists (some sample is not classified with
    /// positive margin).
    #[error("no hard margin: {0}")]
    NoHardMargin(String),

    /// A degenerate parameterisation (zero output scale, zero drift, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An operation needs calibration state that has not been set.
    #[error("uncalibrated state: {0}")]
    Uncalibrated(String),

    /// Binary/textual input could not be parsed; `offset` is the byte
    /// position of the failure.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
