use std::path::PathBuf;

/// Errors raised by the schedule, target, sampler and analysis code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step index {t} out of range {min}..={max}")]
    IndexOutOfRange { t: usize, min: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numeric overflow at step t={t}: |value| = {value:e} exceeds the divergence guard")]
    NumericOverflow { t: usize, value: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn check_step(t: usize, min: usize, max: usize) -> Result<()> {
    if t < min || t > max {
        Err(Error::IndexOutOfRange { t, min, max })
    } else {
        Ok(())
    }
}
