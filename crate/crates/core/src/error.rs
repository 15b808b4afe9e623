use std::path::PathBuf;

use thiserror::Error;

use crate::io::RecordError;
use crate::types::InvalidReason;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid emotion set: {0}")]
    EmotionSet(String),

    #[error("invalid token map: {0}")]
    TokenMap(String),

    #[error("unknown emotion class '{0}'")]
    UnknownClass(String),

    #[error("distribution is invalid ({0})")]
    InvalidDistribution(InvalidReason),

    #[error("annotator {annotator} of utterance '{utterance}' gave an empty label set")]
    EmptyLabelSet { utterance: String, annotator: usize },

    #[error("annotation record for '{0}' has no annotators")]
    NoAnnotators(String),

    #[error("step {step}: no logit for subword token '{token}'")]
    MissingSubword { step: usize, token: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("trace has no steps")]
    EmptyTrace,

    #[error("no emotion-word tokens among generated steps")]
    NoEmotionTokens,

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("prompt template '{0}' has no {{emotion_list}} placeholder")]
    MissingPlaceholder(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },

    #[error(transparent)]
    Record(#[from] RecordError),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed writing {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn input(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Input {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True when the failure was caused by user-supplied inputs or
    /// configuration rather than a bug or environment fault.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Serialize(_) | Error::Write { .. })
    }
}
