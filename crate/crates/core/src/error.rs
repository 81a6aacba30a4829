//! Error types shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed wav: {0}")]
    MalformedWav(String),

    #[error("unsupported wav encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("signal shorter than one analysis frame")]
    EmptySignal,

    #[error("invalid frequency {f0} Hz at sample rate {rate} Hz")]
    InvalidFrequency { f0: f64, rate: u32 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("curve has no breakpoint at t={0}")]
    MissingEndpoint(f64),

    #[error("control value {value:.4} outside [{min}, {max}]")]
    CurveOutOfRange { value: f64, min: f64, max: f64 },

    #[error("model has not been trained")]
    ModelUntrained,

    #[error("code index {index} out of range for codebook of {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("training dataset is empty")]
    EmptyDataset,

    #[error("insufficient data: {got} frames for {need} clusters")]
    InsufficientData { got: usize, need: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("audio too short: need at least {min_s} s, got {got_s:.3} s")]
    TooShort { min_s: f64, got_s: f64 },

    #[error("reference transcript is empty")]
    EmptyReference,

    #[error("sample-rate mismatch: {a} Hz vs {b} Hz")]
    RateMismatch { a: u32, b: u32 },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("lpc order {order} too high for frame of {len} samples")]
    OrderTooHigh { order: usize, len: usize },

    #[error("model file error: {0}")]
    ModelFormat(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
