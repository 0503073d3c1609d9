use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("io error on {}: {cause}", path.display())]
    Io { path: PathBuf, cause: std::io::Error },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },

    #[error("duplicate track id {0:?}")]
    DuplicateId(String),

    #[error("reference not in candidates (reference_id {0:?})")]
    ReferenceNotInCandidates(String),

    #[error("unknown track id {0:?}")]
    UnknownTrack(String),

    #[error("missing score for pair ({0}, {1})")]
    MissingPair(String, String),

    #[error("asymmetric scores for pair ({a}, {b}): {forward} vs {backward}")]
    Asymmetric {
        a: String,
        b: String,
        forward: f64,
        backward: f64,
    },

    #[error("negative score {score} for pair ({a}, {b})")]
    NegativeScore { a: String, b: String, score: f64 },

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("empty feature sequence for track {0:?}")]
    EmptySequence(String),

    #[error("missing feature sequence for track {0:?}")]
    MissingFeatures(String),

    #[error("cycle in bridge provenance at pair ({0}, {1})")]
    ProvenanceCycle(usize, usize),

    #[error("index {index} out of range for {len} tracks")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("no labels: {0}")]
    NoLabels(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, cause: source }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
