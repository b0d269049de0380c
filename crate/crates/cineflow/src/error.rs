//! Crate-wide error type with CLI exit-code mapping.

use std::path::PathBuf;

/// Errors produced by file I/O, validation, and the solver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Magic string, header field count, or header field parse failure.
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    /// Payload shorter or longer than the header promises.
    #[error("payload mismatch in {path}: {reason}")]
    PayloadMismatch { path: PathBuf, reason: String },

    /// NaN or infinity encountered where finite data is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    /// A type invariant would be violated (bad dims, unsorted mask rows, ...).
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Requested sampling pattern cannot be generated.
    #[error("disjointness infeasible: {0}")]
    Infeasible(String),

    #[error("advection unstable, increase substeps: {0}")]
    AdvectionUnstable(String),

    #[error("no dynamic content: temporal variation is zero everywhere")]
    NoDynamicContent,

    #[error("missing artifact {path}: {what}")]
    MissingArtifact { path: PathBuf, what: String },

    /// Non-finite iterates or gradients inside the solver.
    #[error("solver diverged: {0}")]
    Divergence(String),

    /// Bad command-line or config usage.
    #[error("usage error: {0}")]
    Usage(String),
}

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data/config, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Divergence(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
