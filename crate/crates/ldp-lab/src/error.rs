use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    /// Malformed or invalid configuration, located in the source text.
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numerical failure in stage `{stage}`: {source}")]
    Numerical {
        stage: &'static str,
        #[source]
        source: geoldp::Error,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Parse { .. } | LabError::Input(_) => 2,
            LabError::Numerical { .. } | LabError::InsufficientData(_) => 3,
            LabError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

/// Attaches the experiment stage to a core error.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> Stage<T> for geoldp::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|source| match source {
            geoldp::Error::InvalidConfig(msg) | geoldp::Error::InvalidPoint(msg) => LabError::Input(msg),
            geoldp::Error::InsufficientData(msg) => LabError::InsufficientData(msg),
            source => LabError::Numerical { stage, source },
        })
    }
}
