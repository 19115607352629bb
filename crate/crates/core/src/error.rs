use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}, column '{column}': {message}")]
    Load {
        path: PathBuf,
        /// 1-based data row (the header is row 0).
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("cannot split {rows} rows: {message}")]
    Split { rows: usize, message: String },

    #[error("class {class} has {available} rows, {required} required")]
    InsufficientClass {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("k-means needs at least k={k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },

    #[error("mask sampling: {0}")]
    Mask(String),

    #[error("only {eligible} pseudo-classes have {required} members; at least 2 required")]
    TooFewEligibleClasses { eligible: usize, required: usize },

    #[error("task generation failed after {attempts} attempts: {last}")]
    Regeneration { attempts: usize, last: Box<Error> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure was caused by user input (files, schemas,
    /// configs, arguments) rather than by a fault inside the pipeline.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Load { .. }
            | Error::Csv { .. }
            | Error::Schema(_)
            | Error::Config(_)
            | Error::Split { .. }
            | Error::InsufficientClass { .. }
            | Error::InvalidArgument(_)
            | Error::Checkpoint { .. }
            | Error::Empty(_)
            | Error::Mask(_)
            | Error::TooFewPoints { .. } => true,
            Error::Seed { source, .. } => source.is_user_error(),
            Error::Regeneration { .. }
            | Error::TooFewEligibleClasses { .. }
            | Error::Shape(_)
            | Error::Serialize(_) => false,
        }
    }
}
