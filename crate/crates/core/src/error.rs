use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the training, ingestion and evaluation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("stale tape: {0}")]
    StaleTape(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("word `{0}` not found in lexicon")]
    MissingLexiconWord(String),

    #[error("unknown emotion label `{label}` in taxonomy `{taxonomy}`")]
    UnknownLabel { label: String, taxonomy: String },

    #[error("no music item carries label `{0}`")]
    NoItemsForLabel(String),

    #[error("no word vector ingested for tag `{0}`")]
    MissingTagVector(String),

    #[error("record `{id}`: {reason}")]
    Record { id: String, reason: String },

    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            op,
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    /// Errors caused by bad inputs rather than by a failed computation.
    ///
    /// The CLI maps these to exit code 2.
    pub fn is_usage(&self) -> bool {
        !matches!(
            self,
            Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. } | Error::RawIo(_)
        )
    }
}
