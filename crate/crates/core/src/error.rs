use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unknown CRS ({0}); pass an explicit CRS override")]
    UnknownCrs(String),

    #[error("unsupported CRS conversion from {from} to {to}")]
    UnsupportedCrs { from: String, to: String },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("HTTP request failed (status {status}): {message}")]
    Http { status: u16, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("LAS: {0}")]
    Las(#[from] las::Error),

    #[error("TIFF: {0}")]
    Tiff(#[from] tiff::TiffError),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn insufficient(msg: impl Into<String>) -> Self {
        Error::InsufficientData(msg.into())
    }
}

/// Byte offset of a JSON syntax error within `text`.
pub(crate) fn json_error_offset(text: &str, e: &serde_json::Error) -> u64 {
    let before: usize = text
        .split_inclusive('\n')
        .take(e.line().saturating_sub(1))
        .map(str::len)
        .sum();
    (before + e.column().saturating_sub(1)) as u64
}
