use std::io;

use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("unsupported kernel size {0}: kernels must be odd")]
    UnsupportedKernel(usize),
    #[error("unsupported size: {0}")]
    UnsupportedSize(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("construction error: {0}")]
    Construction(String),
    #[error("invalid architecture encoding: {0}")]
    InvalidEncoding(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("container version {found} is newer than supported version {supported}")]
    Version { found: u32, supported: u32 },
    #[error("corrupt container: {0}")]
    Corruption(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
