use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid {field}: {reason}")]
    Validation { field: &'static str, reason: String },

    #[error("invalid audio: {0}")]
    Audio(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("corpus error(s): {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Corpus(Vec<CorpusIssue>),

    #[error("data error: {0}")]
    Data(String),

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenRange { id: usize, vocab: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

/// One rejected line of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusIssue {
    /// 1-based line number.
    pub line: usize,
    pub dialogue_id: Option<String>,
    pub message: String,
}

impl std::fmt::Display for CorpusIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.dialogue_id {
            Some(id) => write!(f, "line {} (dialogue {id}): {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(field: &'static str, reason: impl Into<String>) -> Self {
        CoreError::Validation {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
