use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the tag-generation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("conflicting config keys `{first}` and `{second}`: {reason}")]
    ConfigConflict {
        first: String,
        second: String,
        reason: String,
    },

    #[error("line {line}: {reason}")]
    Corpus { line: usize, reason: String },

    #[error("tag `{0}` is not in the frequency table")]
    UnknownTag(String),

    #[error("infeasible synthetic corpus: {0}")]
    Synth(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("bad checkpoint header: expected {expected}, found {found}")]
    CheckpointHeader { expected: String, found: String },

    #[error("document ids missing from predictions: {0:?}")]
    MissingIds(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::ConfigConflict { .. } => "config_conflict",
            Error::Corpus { .. } => "corpus",
            Error::UnknownTag(_) => "unknown_tag",
            Error::Synth(_) => "synth",
            Error::Diverged { .. } => "diverged",
            Error::Checkpoint(_) => "checkpoint",
            Error::CheckpointHeader { .. } => "checkpoint_header",
            Error::MissingIds(_) => "missing_ids",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
