use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("{op}: shape mismatch ({msg})")]
    Shape { op: &'static str, msg: String },
    #[error("{what} too short: need {need} samples, got {got}")]
    TooShort {
        what: &'static str,
        need: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{path}: sample rate {got} Hz, expected {expected} Hz")]
    SampleRate {
        path: PathBuf,
        got: u32,
        expected: u32,
    },
    #[error("{path}: unsupported WAV format ({msg})")]
    WavFormat { path: PathBuf, msg: String },
    #[error("source at {0:?} is not strictly inside the room")]
    OutsideRoom([f64; 3]),
    #[error("scene sampling exhausted {0} rejection tries")]
    RejectionExhausted(usize),
    #[error("source clip '{0}' has zero power")]
    SilentSource(String),
    #[error("decay curve never reaches {0} dB")]
    DecayRange(f64),
    #[error("singular system in block {block}, bin {bin}")]
    Singular { block: usize, bin: usize },
    #[error("zero trace in block {block}, bin {bin}")]
    ZeroTrace { block: usize, bin: usize },
    #[error("zero-power reference signal")]
    ZeroReference,
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("checksum mismatch for {0}")]
    Checksum(PathBuf),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> CoreError {
    CoreError::Shape { op, msg: msg.into() }
}
