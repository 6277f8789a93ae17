use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library. Each variant maps to a CLI exit category.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed image {}: {reason}", path.display())]
    MalformedImage { path: PathBuf, reason: String },

    #[error("bit depth mismatch in {}: expected {expected}-bit, found {found}-bit", path.display())]
    BitDepth {
        path: PathBuf,
        expected: u8,
        found: u8,
    },

    #[error("layout infeasible: {0}")]
    LayoutInfeasible(String),

    #[error("schema violation in {source_name}: {message}")]
    Schema {
        source_name: String,
        message: String,
    },

    #[error("parse error in {source_name} at line {line}, column {column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Process exit code for this error's category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => 2,
            Error::MissingFile(_) | Error::Io { .. } => 3,
            Error::MalformedImage { .. } | Error::BitDepth { .. } => 4,
            Error::Schema { .. } | Error::Parse { .. } => 5,
            Error::Checkpoint(_) => 6,
            Error::LayoutInfeasible(_) => 7,
            Error::EmptyInput(_) => 8,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
