use std::path::PathBuf;

use crate::format::MalformedLine;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error("{path}: {bad} of {total} lines malformed (limit {limit_pct}%); first: line {}: {}",
        first.line, first.reason)]
    TooManyMalformed {
        path: PathBuf,
        bad: usize,
        total: usize,
        limit_pct: f64,
        first: MalformedLine,
    },

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: poirec_core::Error,
    },
}

impl CliError {
    /// 1 usage/config, 2 data, 3 training divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Core { source, .. } => match source {
                poirec_core::Error::DivergenceDetected { .. } => 3,
                poirec_core::Error::InvalidConfig(_) => 1,
                _ => 2,
            },
            CliError::Io { .. } | CliError::Artifact { .. } | CliError::TooManyMalformed { .. } => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Attaches context to core errors.
pub trait CoreContext<T> {
    fn context(self, what: &str) -> Result<T>;
}

impl<T> CoreContext<T> for poirec_core::Result<T> {
    fn context(self, what: &str) -> Result<T> {
        self.map_err(|source| CliError::Core {
            context: what.to_string(),
            source,
        })
    }
}
