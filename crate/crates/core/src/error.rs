use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sentence")]
    EmptySentence,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {err}", path.display())]
    Io { path: PathBuf, err: std::io::Error },

    #[error("not enough usable sentences: need {needed}, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("token id {id} outside vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged { epoch: usize, batch: usize, detail: String },

    #[error("{context}: {inner}")]
    Context { context: String, inner: Box<Error> },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("checkpoint checksum mismatch (file truncated or corrupt)")]
    Checksum,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("vocabulary fingerprint mismatch: checkpoint has {checkpoint}, corpus has {corpus}")]
    Fingerprint { checkpoint: String, corpus: String },

    #[error("invalid request: {0}")]
    Validation(String),

    #[error("session store unavailable: {0}")]
    StoreUnavailable(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), err: source }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), inner: Box::new(self) }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
