//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants carry enough
//! context (step indices, epoch/batch counters, file paths) that a failure
//! deep inside an experiment driver can be diagnosed without a debugger.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied configuration or arguments.
    #[error("validation: {0}")]
    Validation(String),

    /// Array dimensions disagree with what an operation requires.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A simulated state left the numerically safe region.
    #[error("simulation blew up at step {step}: {detail}")]
    Blowup { step: usize, detail: String },

    /// A training loss became NaN or infinite.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// All pairwise distances were zero, so no bandwidth exists.
    #[error("degenerate bandwidth: all pairwise distances are zero")]
    DegenerateBandwidth,

    /// An iterative fit failed to produce a usable answer.
    #[error("fit failed: {0}")]
    FitFailure(String),

    /// A dataset or checkpoint file does not start with the expected header.
    #[error("malformed header in {path}: {detail}")]
    MalformedHeader { path: String, detail: String },

    /// Sizes recorded in a file header disagree with its payload.
    #[error("truncated file {path}: expected {expected} bytes after header, found {found}")]
    TruncatedFile { path: String, expected: u64, found: u64 },

    /// An underlying I/O failure, tagged with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure for manifests and reports.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
