use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by tensor operations, the model, the data layer and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("bad groups: {channels_in} input / {channels_out} output channels are not divisible by {groups}")]
    BadGroups {
        channels_in: usize,
        channels_out: usize,
        groups: usize,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable does not belong to this graph")]
    DetachedTensor,
    #[error("step size must be strictly positive (found {0})")]
    NonPositiveDelta(f64),
    #[error("scan order does not match input: {0}")]
    OrderMismatch(String),
    #[error("position {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },
    #[error("missing phase {0}")]
    MissingPhase(&'static str),
    #[error("model head is all zeros; saliency requires trained parameters")]
    UntrainedParams,
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("only one class present; AUC is undefined")]
    SingleClass,
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("bad magic in {0}")]
    BadMagic(PathBuf),
    #[error("declared payload does not fit the file: {0}")]
    ShapeOverflow(String),
    #[error("malformed file {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
