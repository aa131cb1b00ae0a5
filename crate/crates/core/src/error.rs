use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {node}: {detail}")]
    ShapeMismatch { node: String, detail: String },

    #[error("unbound input `{0}`")]
    UnboundInput(String),

    #[error("root expression is not a scalar (shape {0:?})")]
    NonScalarRoot(Vec<usize>),

    #[error("padding margin {margin} exceeds extent {extent}")]
    MarginTooLarge { margin: usize, extent: usize },

    #[error("channel mismatch: input has {got} channels, layer expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("image {height}x{width} is too small: dilation {dilation} needs at least {min}x{min}")]
    ImageTooSmall { height: usize, width: usize, dilation: usize, min: usize },

    #[error("invalid slope {0}: expected 0 <= slope < 1")]
    InvalidSlope(f64),

    #[error("empty input")]
    EmptyInput,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("quality model must be frozen while training the enhancer")]
    PredictorNotFrozen,

    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("parse error in {path} at byte {offset}: {reason}")]
    Parse { path: PathBuf, offset: usize, reason: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(node: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { node: node.into(), detail: detail.into() }
    }
}
