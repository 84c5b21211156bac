//! Crate-wide error type.
//!
//! Errors are grouped by how a caller should react: domain/contract errors
//! indicate bad inputs, singularity errors a numerically unsolvable system,
//! selection errors an unusable penalty grid, and format/io errors bad files.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Error, Debug)]
pub enum Error {
    /// An argument fell outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// An input violated a documented precondition or invariant.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A linear system was numerically singular.
    #[error("singular system at lambda = {lambda:.3e}: {detail}")]
    Singular { lambda: f64, detail: String },

    /// No usable penalty value on the grid.
    #[error("penalty selection failed: {0}")]
    Selection(String),

    /// Malformed input file.
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code associated with this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Format { .. } | Error::Json(_) => 2,
            Error::Domain(_) | Error::Contract(_) => 3,
            Error::Singular { .. } => 4,
            Error::Selection(_) => 5,
        }
    }

    /// Short machine-readable kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Contract(_) => "contract",
            Error::Singular { .. } => "singular",
            Error::Selection(_) => "selection",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
