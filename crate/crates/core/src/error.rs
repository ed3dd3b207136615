use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("task {task} requires a payload")]
    MissingPayload { task: &'static str },
    #[error("task {task} does not accept a payload")]
    UnexpectedPayload { task: &'static str },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("caption is empty")]
    EmptyCaption,
    #[error("mask contains non-binary value {0}")]
    NonBinaryMask(f32),
    #[error("score must be present exactly for pseudo-labeled triplets (source {source_kind}, score {score:?})")]
    ScorePresence {
        source_kind: &'static str,
        score: Option<f64>,
    },
    #[error("score {0} is outside [0, 1]")]
    ScoreRange(f64),

    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec failure on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("infeasible scene config: {0}")]
    InfeasibleConfig(String),
    #[error("referring query `{query}` matched {matches} shapes")]
    AmbiguousReferent { query: String, matches: usize },

    #[error("input size {height}x{width} is not divisible by {divisor}")]
    IndivisibleSize {
        height: usize,
        width: usize,
        divisor: usize,
    },
    #[error("every caption token is masked out")]
    EmptyEffectiveCaption,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate box {0:?}")]
    DegenerateBox([usize; 4]),

    #[error("unknown training stage {0}")]
    UnknownStage(u32),
    #[error("non-finite loss at step {step}: bce={bce}, dice={dice}")]
    NonFiniteLoss { step: usize, bce: f64, dice: f64 },
    #[error("manifest triplet {index} has task {found}, expected {expected}")]
    TaskMismatch {
        index: usize,
        expected: &'static str,
        found: &'static str,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
