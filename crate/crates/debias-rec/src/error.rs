//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dataset is empty after filtering (thresholds {min_item_clicks}/{min_user_clicks})")]
    EmptyAfterFilter {
        min_item_clicks: usize,
        min_user_clicks: usize,
    },

    #[error("not enough users: need {needed}, have {available} ({context})")]
    InsufficientUsers {
        needed: usize,
        available: usize,
        context: String,
    },

    #[error("item {item} is not in the user profile")]
    ItemNotInProfile { item: u32 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("missing artifact {path}: run `debias-rec {command}` first")]
    MissingArtifact { path: PathBuf, command: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("experiment directory {0} is locked by another run (remove the .lock file if stale)")]
    DirectoryLocked(PathBuf),

    #[error("incompatible cache or checkpoint: {0}")]
    VersionMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization failure: {0}")]
    Serialize(String),
}

impl From<bincode::Error> for Error {
    fn from(e: bincode::Error) -> Self {
        Error::Serialize(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialize(e.to_string())
    }
}
