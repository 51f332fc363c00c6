use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown network spec `{name}`; valid names: {valid}")]
    UnknownSpec { name: String, valid: String },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch at layer {layer_id}: {reason}")]
    Shape { layer_id: usize, reason: String },

    #[error("invalid learngene structure: {0}")]
    InvalidStructure(String),

    #[error("learngene does not fit target: {0}")]
    Inheritance(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss {loss} during training")]
    NonFiniteLoss { loss: f64 },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("dataset format error at byte {offset}: {reason}")]
    DatasetFormat { offset: u64, reason: String },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("checkpoint format version {found} is not supported (expected {expected}); refusing to migrate")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
