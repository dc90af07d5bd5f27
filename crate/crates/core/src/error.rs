use thiserror::Error;

/// Errors raised anywhere in the imputation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("invalid value {value} for feature {feature}")]
    InvalidValue { feature: usize, value: f64 },

    #[error("bin index {bin} out of range for feature {feature} with {bins} bins")]
    BinIndex {
        feature: usize,
        bin: usize,
        bins: usize,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("aggregate entry {index} = {value} is at or above half the ring modulus; suspected wraparound")]
    Wraparound { index: usize, value: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse error class, used by the CLI for exit codes and the one-line error report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Protocol,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::Protocol => "protocol",
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Protocol(_) | Error::Wraparound { .. } => ErrorCategory::Protocol,
            Error::Dataset(_)
            | Error::InvalidValue { .. }
            | Error::BinIndex { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorCategory::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
