// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use synloc_engine::EngineError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Engine(#[from] EngineError),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}: no records")]
    NoRecords(PathBuf),

    #[error("duplicate phenomenon uid `{0}`")]
    DuplicatePhenomenon(String),

    #[error("phenomenon `{0}` has no category (category map is mandatory)")]
    UnknownCategory(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("phenomenon `{uid}` too small: {message}")]
    TooSmall { uid: String, message: String },

    #[error("missing {pos} annotation for pair `{pair_id}`")]
    MissingAnnotation { pair_id: String, pos: String },

    #[error("too few samples: {0}")]
    TooFewSamples(String),

    #[error("no unit has a defined t statistic")]
    AllUndefined,

    #[error("unit sets are not comparable: {0}")]
    Incomparable(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("integrity check failed: {0}")]
    Digest(String),

    #[error("cache key collision at {path}: {message}")]
    CacheCollision { path: PathBuf, message: String },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error classes, used by the CLI to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Config,
            Error::AllUndefined | Error::Degenerate(_) | Error::TooFewSamples(_) => ErrorKind::Numeric,
            Error::Engine(EngineError::Config(_) | EngineError::Sites(_) | EngineError::Ablation(_)) => {
                ErrorKind::Config
            }
            _ => ErrorKind::Data,
        }
    }
}
