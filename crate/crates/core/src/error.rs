use std::path::Path;

use thiserror::Error;

/// Errors produced by the metric, loader and phonemizer routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: byte offset {offset}: {msg}")]
    Binary {
        path: String,
        offset: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid language id {0:?}: expected non-empty lowercase ASCII alphanumerics")]
    InvalidLanguage(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("row-count mismatch for {language}: expected {expected} rows, got {got}")]
    Alignment {
        language: String,
        expected: usize,
        got: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("gap undefined: both scores are zero")]
    UndefinedGap,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no rule matches {found:?} at character {position}")]
    Conversion { position: usize, found: char },

    #[error("no inventory unit matches {found:?} at character offset {offset}")]
    Segmentation { offset: usize, found: String },

    #[error("pair ({a}, {b}): {source}")]
    Pair {
        a: String,
        b: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used by front ends to pick an exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad, missing or unreadable input data.
    Data,
    /// The computation itself is undefined on otherwise well-formed input.
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Degenerate(_) | Error::UndefinedGap | Error::Domain(_) => ErrorKind::Numeric,
            Error::Pair { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn pair(a: impl ToString, b: impl ToString, source: Error) -> Self {
        Error::Pair {
            a: a.to_string(),
            b: b.to_string(),
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
