//! Error type shared by all library modules.

use std::path::PathBuf;

/// Errors produced by the experiment kit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Dataset files are absent or do not match the published binary layout.
    #[error("dataset ingestion failed for {file:?}: {reason}")]
    Ingestion { file: PathBuf, reason: String },

    /// A caller passed an argument outside an operation's contract.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A configuration is syntactically valid but names an unsupported setup.
    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    /// Normalizing an (almost) all-zero vector; the direction is undefined.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Mixture density evaluated at 0 < beta < 1 without an estimated normalizer.
    #[error("SSIM-density normalizer has not been estimated (required for 0 < beta < 1)")]
    NormalizerNotEstimated,

    /// Config file rejected: unknown key, bad value, or missing required field.
    #[error("config error: {0}")]
    Config(String),

    /// A results or report line could not be parsed.
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// Checkpoint file is incompatible with the requested operation.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training aborted (for example on a non-finite loss).
    #[error("training aborted: {0}")]
    Training(String),

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
