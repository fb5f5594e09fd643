use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the audit pipeline.
///
/// Variants are grouped so the CLI can map them onto exit codes: configuration
/// problems, bad input data, and numerical failures.
#[derive(Debug, Error)]
pub enum SnobError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{path}:{line}: format error: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<SnobError>,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl SnobError {
    pub fn class(&self) -> ErrorClass {
        match self {
            SnobError::Config(_) => ErrorClass::Config,
            SnobError::Stage { source, .. } => source.class(),
            SnobError::Numerical { .. } => ErrorClass::Numerical,
            SnobError::Parse { .. }
            | SnobError::Validation(_)
            | SnobError::Format { .. }
            | SnobError::Lookup(_)
            | SnobError::Dimension { .. }
            | SnobError::Undefined(_)
            | SnobError::Io { .. } => ErrorClass::Data,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            SnobError::Stage { .. } => self,
            other => SnobError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SnobError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, SnobError>;
