use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LcmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LcmError {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown architecture preset `{0}`")]
    UnknownPreset(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("optimization diverged after {steps} steps (energy {energy} vs initial {initial})")]
    Divergence {
        steps: usize,
        energy: f64,
        initial: f64,
        trace: Vec<f64>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {detail}")]
    Decode { path: PathBuf, detail: String },

    #[error("unsupported pixel format in {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },

    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("malformed checkpoint header: {0}")]
    Header(String),

    #[error("manifest error: {0}")]
    Manifest(String),
}

impl LcmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LcmError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (NaN, divergence) rather than of
    /// the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, LcmError::NonFinite { .. } | LcmError::Divergence { .. })
    }
}
