use std::path::PathBuf;

use crate::providers::ProviderError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("video has no frames")]
    EmptyVideo,
    #[error("invalid frame feature at index {index}: {reason}")]
    InvalidFeature { index: usize, reason: String },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("shape mismatch: expected length {expected}, got {actual}")]
    ShapeError { expected: usize, actual: usize },
    #[error("injection contains non-finite value at node {0}")]
    InvalidInjection(usize),
    #[error("dense solve refused: {k} nodes exceeds cap {cap}")]
    TooLargeForDense { k: usize, cap: usize },
    #[error("unknown evidence source {0:?}")]
    InvalidSource(String),
    #[error("no evidence items to score")]
    NoEvidence,
    #[error("query decomposition failed: {0}")]
    Decomposition(String),
    #[error("query yields no usable facet: {0}")]
    InvalidQuery(String),
    #[error("timeline response malformed: {0}")]
    Timeline(String),
    #[error("nothing selected for packaging")]
    EmptySelection,
    #[error("could not parse answer: {0}")]
    AnswerParse(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("feature bundle not found at {}", .0.display())]
    BundleNotFound(PathBuf),
    #[error("malformed feature bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
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

    /// Process exit code: 2 input error, 3 provider error, 4 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Provider(_) | Error::Decomposition(_) | Error::Timeline(_) => 3,
            Error::Invariant(_) => 4,
            _ => 2,
        }
    }

    /// Stable machine-readable tag, written to `error.json`.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyVideo => "EmptyVideo",
            Error::InvalidFeature { .. } => "InvalidFeature",
            Error::EmptyInput(_) => "EmptyInput",
            Error::EmptyGraph => "EmptyGraph",
            Error::ShapeError { .. } => "ShapeError",
            Error::InvalidInjection(_) => "InvalidInjection",
            Error::TooLargeForDense { .. } => "TooLargeForDense",
            Error::InvalidSource(_) => "InvalidSource",
            Error::NoEvidence => "NoEvidence",
            Error::Decomposition(_) => "DecompositionError",
            Error::InvalidQuery(_) => "InvalidQuery",
            Error::Timeline(_) => "TimelineError",
            Error::EmptySelection => "EmptySelection",
            Error::AnswerParse(_) => "ParseError",
            Error::Config(_) => "ConfigError",
            Error::BundleNotFound(_) => "BundleNotFound",
            Error::Bundle(_) => "BundleError",
            Error::Provider(_) => "ProviderError",
            Error::Invariant(_) => "InvariantViolation",
            Error::Io { .. } => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}
