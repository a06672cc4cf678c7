use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{field} = {value} is not divisible by 2^{cells} = {divisor}")]
    DimensionNotDivisible {
        field: &'static str,
        value: usize,
        cells: usize,
        divisor: usize,
    },

    #[error("channel count {0} must be even and positive")]
    OddChannels(usize),

    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown attention operation {0:?}")]
    UnknownOp(String),

    #[error("unknown column choice {0:?}")]
    UnknownColumn(String),

    #[error("{what}: expected {expected} entries, found {found}")]
    Length {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("malformed genotype document: {0}")]
    Genotype(String),

    #[error("genotype does not match network configuration: {0}")]
    GenotypeMismatch(String),

    #[error("architecture probabilities off the simplex: {0}")]
    NonSimplex(String),

    #[error("NaN in architecture logits")]
    NanLogits,

    #[error("non-finite {component} loss at iteration {iteration}")]
    NonFinite {
        component: &'static str,
        iteration: usize,
    },

    #[error("{0}")]
    Dataset(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("image values must lie in [0, 1]")]
    OutOfRange,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
