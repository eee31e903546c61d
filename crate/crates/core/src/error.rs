use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate vector: norm {norm:e} is too small to normalize")]
    DegenerateVector { norm: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("the model has no class heads yet")]
    NoClasses,

    #[error("target {value} for class {class} is outside [0, 1]")]
    InvalidTarget { class: usize, value: f64 },

    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("memory budget K={budget} cannot hold one exemplar for each of {classes} classes")]
    BudgetExhausted { budget: usize, classes: usize },

    #[error("requested {requested} exemplars but the class only has {available} samples")]
    InsufficientSamples { requested: usize, available: usize },

    #[error("cannot reduce an exemplar list of length {len} to {requested}")]
    InvalidReduction { len: usize, requested: usize },

    #[error("class {class} has no exemplars")]
    MissingExemplars { class: usize },

    #[error("class {class} has no retained training data")]
    MissingData { class: usize },

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("unknown strategy '{name}'; valid names: {valid}")]
    UnknownStrategy { name: String, valid: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("row at line {line} has {got} values, expected {expected}")]
    RowShape { line: u64, expected: usize, got: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("bad checkpoint magic")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,

    #[error("checkpoint invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
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
