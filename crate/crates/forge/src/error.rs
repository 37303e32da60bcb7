use std::path::PathBuf;

use rolespeak_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForgeError {
    /// An external model call failed; `retriable` marks transient failures.
    #[error("{client} client failed: {message}")]
    Client {
        client: &'static str,
        message: String,
        retriable: bool,
    },

    #[error("invalid {field}: {reason}")]
    Validation { field: &'static str, reason: String },

    #[error("dialogue {dialogue_id} aborted: {reason}")]
    Aborted { dialogue_id: String, reason: String },

    #[error("dialogue {dialogue_id} incomplete: speech synthesis failed on turn {turn}: {reason}")]
    Incomplete {
        dialogue_id: String,
        turn: usize,
        reason: String,
    },

    #[error("no recorded response for {kind} request {key}")]
    MissingFixture { kind: &'static str, key: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl ForgeError {
    pub fn validation(field: &'static str, reason: impl Into<String>) -> Self {
        Self::Validation {
            field,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_retriable(&self) -> bool {
        matches!(self, Self::Client { retriable: true, .. })
    }
}

pub type Result<T, E = ForgeError> = std::result::Result<T, E>;
