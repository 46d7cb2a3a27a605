// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the inference engine.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid weight container: {0}")]
    Format(String),

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("unexpected tensor `{0}` for this config")]
    UnexpectedTensor(String),

    #[error("tensor `{name}` has shape {actual:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("tensor `{0}` contains non-finite values")]
    NonFinite(String),

    #[error("sequence of {len} tokens exceeds max_positions {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("empty token sequence")]
    EmptySequence,

    #[error("tokenizer: {0}")]
    Tokenizer(String),

    #[error("invalid ablation: {0}")]
    Ablation(String),

    #[error("invalid site set: {0}")]
    Sites(String),

    #[error("activation cache: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, EngineError>;

impl EngineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
