use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("k = {k} exceeds cloud size {count}")]
    KTooLarge { k: usize, count: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cloud is degenerate: all points coincide")]
    DegenerateCloud,
    #[error("too few points: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("{steps} halving steps leave no points from a cloud of {count}")]
    TooManySteps { steps: usize, count: usize },
    #[error("invalid sample count {m} for a cloud of {count} (start index {start})")]
    BadCount { m: usize, count: usize, start: usize },
    #[error("ladder has {got} levels, model expects {expected}")]
    LadderMismatch { expected: usize, got: usize },
    #[error("{what} = {value} is outside [0, 1]")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("query {index} reached a non-finite state during projection")]
    NonFiniteState { index: usize },
    #[error("upsampling rate must be finite and > 1, got {0}")]
    BadRate(f64),
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },
    #[error("{path}:{line}: {msg}")]
    Malformed { path: PathBuf, line: usize, msg: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("config line {line}: key `{key}`: {msg}")]
    Config { line: usize, key: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
