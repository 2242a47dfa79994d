use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] ddl_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 0 success, 1 verification failure, 2 usage or configuration error,
    /// 3 I/O error (including unreadable or malformed input files).
    pub fn exit_code(&self) -> i32 {
        use ddl_core::Error as E;
        match self {
            CliError::Verification(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                E::UndefinedMetric(_) | E::NonFinite(_) => 1,
                E::Io { .. } | E::Json { .. } | E::Format { .. } => 3,
                E::Config(_) | E::Shape { .. } | E::Data(_) | E::EmptyDynamics(_) | E::Tape(_) => 2,
            },
        }
    }
}
