use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("tape error: {0}")]
    Tape(String),
    #[error("bag needs at least 2 snippets for dynamics, got {0}")]
    EmptyDynamics(usize),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("{path}: {kind}")]
    Format { path: String, kind: FormatError },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Binary container parse failures, shared by feature bags and checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload")]
    Truncated,
    #[error("non-finite float at index {0}")]
    NonFiniteValue(usize),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("trailing bytes after payload")]
    TrailingBytes,
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, kind: FormatError) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            kind,
        }
    }
}
