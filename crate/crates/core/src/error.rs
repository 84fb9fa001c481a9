use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text (CoNLL, embeddings, mappings, model files).
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown label {label:?} at line {line}")]
    Label { line: usize, label: String },

    /// A sentence or prediction that breaks the BIO scheme or a shape contract.
    #[error("invalid sentence {sentence} at position {position}: {message}")]
    Validation {
        sentence: usize,
        position: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("alignment infeasible: {0}")]
    Infeasible(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("unsupported artifact format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn validation(sentence: usize, position: usize, message: impl Into<String>) -> Self {
        Error::Validation {
            sentence,
            position,
            message: message.into(),
        }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }
}
