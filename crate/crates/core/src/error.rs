use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("image {h}x{w} is not divisible into {p}x{p} patches")]
    Ingestion { h: usize, w: usize, p: usize },

    #[error("backward: {0}")]
    Backward(&'static str),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("pgm decode: {0}")]
    Pgm(String),

    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },

    #[error("manifest {path}, row {row}: {msg}")]
    ManifestRow {
        path: PathBuf,
        row: usize,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("plan: {0}")]
    Plan(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Whether the failure stems from bad user input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Ingestion { .. }
                | Error::Manifest { .. }
                | Error::ManifestRow { .. }
                | Error::Plan(_)
                | Error::Pgm(_)
        )
    }
}
